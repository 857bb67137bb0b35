use attnmosaic::curvefit::FitError;
use attnmosaic::mosaic::MosaicError;
use attnmosaic::prflash::AttnError;
use attnmosaic::saq::SaqError;

/// One-line error with a stable code, printed as `error[code]: message`.
#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new("io", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new("io", e.to_string())
    }
}

impl From<MosaicError> for CliError {
    fn from(e: MosaicError) -> Self {
        let code = match &e {
            MosaicError::NoTiles(_) => "no-tiles",
            MosaicError::ZeroTileSize => "usage",
            MosaicError::GridTooSmall { .. } => "grid-too-small",
            MosaicError::Constraint { .. } => "constraint",
            MosaicError::UnknownTile(_) | MosaicError::InvalidMetadata(_) => "validation",
            MosaicError::TargetMismatch { .. }
            | MosaicError::ThumbMismatch { .. }
            | MosaicError::Unassigned { .. } => "internal",
            MosaicError::MissingSource { .. } | MosaicError::Io(_) | MosaicError::Json(_) => "io",
            MosaicError::Image(_) => "image",
        };
        Self::new(code, e.to_string())
    }
}

impl From<AttnError> for CliError {
    fn from(e: AttnError) -> Self {
        Self::new("usage", e.to_string())
    }
}

impl From<SaqError> for CliError {
    fn from(e: SaqError) -> Self {
        let code = match e {
            SaqError::InvalidConfig(_) | SaqError::EmptyPrompt => "usage",
            _ => "internal",
        };
        Self::new(code, e.to_string())
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        let code = match e {
            FitError::Parse { .. } | FitError::TooFewPoints(_) | FitError::NonFinite(_) => "input",
            FitError::Pole { .. } | FitError::Radicand { .. } => "domain",
            FitError::FitFailed { .. } => "fit-failed",
        };
        Self::new(code, e.to_string())
    }
}
