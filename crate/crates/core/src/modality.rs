use serde::{Deserialize, Serialize};
use std::fmt;

/// Kind of training sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    SingleImage,
    MultiImage,
    Video,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 4] = [
        Modality::SingleImage,
        Modality::MultiImage,
        Modality::Video,
        Modality::Text,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::SingleImage => "single_image",
            Modality::MultiImage => "multi_image",
            Modality::Video => "video",
            Modality::Text => "text",
        }
    }

    pub fn has_media(&self) -> bool {
        !matches!(self, Modality::Text)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
