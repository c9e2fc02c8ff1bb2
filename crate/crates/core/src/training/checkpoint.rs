use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::Adagrad;
use super::trainer::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{ModelShape, Params};
use crate::textproc::{LangMode, Vocabulary};

const FORMAT_VERSION: u32 = 1;

/// Everything needed to resume or inspect a training run, stored as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub shape: ModelShape,
    pub lang_mode: LangMode,
    pub train: TrainConfig,
    /// [`Vocabulary::content_hash`] of the vocabulary the ids refer to.
    pub vocab_hash: u64,
    /// Image ids in dense index order (lookup tower only).
    pub image_ids: Vec<String>,
    pub epochs_completed: usize,
    pub params: Params,
    pub optimizer: Adagrad,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        shape: ModelShape,
        vocab: &Vocabulary,
        train: TrainConfig,
        image_ids: Vec<String>,
        epochs_completed: usize,
        params: Params,
        optimizer: Adagrad,
    ) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            shape,
            lang_mode: vocab.mode(),
            train,
            vocab_hash: vocab.content_hash(),
            image_ids,
            epochs_completed,
            params,
            optimizer,
        }
    }

    pub fn write<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = BufWriter::new(w);
        serde_json::to_writer(&mut w, self)?;
        w.flush()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(file).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }

    /// Fails unless `vocab` is the vocabulary this checkpoint was trained with.
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if vocab.content_hash() == self.vocab_hash {
            Ok(())
        } else {
            Err(Error::Checkpoint("vocabulary does not match checkpoint".into()))
        }
    }
}
