//! On-disk formats and dataset layout.
//!
//! ```text
//! <root>/manifest.json
//! <root>/<scene_id>/{left,right,center,top,bottom}.png16
//! <root>/<scene_id>/gt_disp.pfm
//! <root>/<scene_id>/mask.pfm
//! <root>/<scene_id>/meta.json
//! ```

mod frameset;
mod manifest;
pub mod pfm;
mod scene;
pub mod srgb;

pub use frameset::{
    read_frameset, read_views, write_frameset, GT_FILE, MASK_FILE, META_FILE, VIEW_EXT,
};
pub use manifest::{
    split_dataset, DatasetManifest, ManifestEntry, Split, SplitSpec, MANIFEST_FILE,
};
pub use scene::{
    discover_scenes, load_scene, LoadOutcome, SceneRecord, Transfer, DEPTH_FILE, IMAGE_FILE,
};
