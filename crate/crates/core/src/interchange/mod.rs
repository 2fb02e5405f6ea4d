//! On-disk data model: binary tensors, dataset manifests, text banks and
//! rule files.

mod manifest;
mod rulespec;
mod tensor;
mod textbank;

pub use manifest::{
    load_manifest, validate_manifest, write_manifest, ImageDoc, ImageRecord, InstanceDoc,
    InterestInstance, Label, Manifest, ManifestDoc, Split,
};
pub use rulespec::{load_rulespec, parse_rulespec, write_rulespec, RuleSpec, RuleSpecParseError};
pub use tensor::{decode_tensor, encode_tensor, read_tensor, write_tensor, Tensor, MAGIC, VERSION};
pub use textbank::{load_text_bank, write_text_bank, TextBank};
