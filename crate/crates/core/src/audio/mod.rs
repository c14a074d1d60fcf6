//! Audio frontend and segment-level ConvNet.

mod convnet;
mod mel;
mod wav;

pub use convnet::{
    audio_forward, build_audio_spec, segment_count, AudioArch, AudioModel, AudioOutput, BagPooling, MIN_FRAMES,
    REFERENCE_FRAMES, SEGMENT_STRIDE,
};
pub use mel::{hz_to_mel, logmel, mel_to_hz, pad_or_crop, LogMel, MelConfig};
pub use wav::{encode_wav, parse_wav, read_wav, write_wav, Wav};
