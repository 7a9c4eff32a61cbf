//! Paper-to-presentation compiler core.
//!
//! A paper bundle (Markdown plus extracted images) is lifted into a
//! [`dag::ScholarDag`] by [`paper2dag`], then lowered by three backends:
//! [`ppt`] (slide deck), [`poster`] (single-page poster) and [`pr`]
//! (promotion post). All model calls go through [`gateway`], which records
//! and replays transcripts so whole runs can be reproduced offline.

pub mod dag;
pub mod text;
pub mod gateway;
pub mod prompts;
pub mod measure;
pub mod paper2dag;
pub mod ppt;
pub mod poster;
pub mod pr;
pub mod synthetic;
