//! Text checkpoint format.
//!
//! ```text
//! FTFORGE-CKPT v1
//! key=value key=value ... tensors=name:rows:cols,name:rows:cols,...
//!
//! <rows lines of cols space-separated floats, 17 significant digits>   (per manifest entry)
//! END
//! ```
//!
//! The manifest lists `live.*`, then `prior.*` and `delta.*` when present,
//! then the Adam moments `adam.m.*` and `adam.v.*` when present, each in
//! canonical parameter order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::optimizer::{OptimizerKind, OptimizerState};
use crate::params::{Param, ParamBundle, TensorSet};
use crate::regularization::{RegConfig, Retention};
use crate::tensor::Tensor;
use crate::training::TrainMode;

pub const MAGIC: &str = "FTFORGE-CKPT";
pub const VERSION: &str = "v1";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingMeta {
    pub updates: u64,
    pub best_valid_bleu: Option<f64>,
    /// Learning rate and validation frequency of the run that produced the
    /// checkpoint; fine-tuning derives its own from these.
    pub learning_rate: f64,
    pub validation_frequency: u64,
    pub mode: TrainMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamBundle,
    pub reg: RegConfig,
    pub optimizer: OptimizerState,
    pub meta: TrainingMeta,
}

fn escape(token: &str) -> String {
    let mut s = String::with_capacity(token.len());
    for c in token.chars() {
        match c {
            '%' => s.push_str("%25"),
            ',' => s.push_str("%2C"),
            c => s.push(c),
        }
    }
    s
}

fn unescape(token: &str) -> String {
    token.replace("%2C", ",").replace("%25", "%")
}

fn opt_f64(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

fn retention(r: Option<Retention>) -> String {
    r.map_or_else(|| "none".into(), |r| format!("{}/{}", r.word, r.other))
}

fn format_value(x: f64) -> String {
    format!("{x:.16e}")
}

impl Checkpoint {
    fn manifest(&self) -> Vec<(String, &Tensor)> {
        fn push<'t>(out: &mut Vec<(String, &'t Tensor)>, prefix: &str, set: &'t [Tensor]) {
            for (p, t) in Param::ALL.iter().zip(set) {
                out.push((format!("{prefix}.{}", p.name()), t));
            }
        }
        let mut out = Vec::new();
        push(&mut out, "live", self.params.live());
        if let Some(prior) = self.params.prior() {
            push(&mut out, "prior", prior);
        }
        if let Some(delta) = self.params.delta() {
            push(&mut out, "delta", delta);
        }
        if let Some((m, v)) = &self.optimizer.moments {
            push(&mut out, "adam.m", m);
            push(&mut out, "adam.v", v);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let manifest = self.manifest();
        let o = &self.optimizer;
        let mut s = format!("{MAGIC} {VERSION}\n");
        let mut header = vec![
            format!("vocab_size={}", self.model.vocab_size),
            format!("embed_dim={}", self.model.embed_dim),
            format!("hidden_dim={}", self.model.hidden_dim),
            format!("max_decode_len={}", self.model.max_decode_len),
            format!("reg.lambda={}", self.reg.lambda_map_l2),
            format!("reg.dropout={}", retention(self.reg.dropout)),
            format!("reg.tuneout={}", retention(self.reg.tuneout)),
            format!("optimizer={}", o.kind.as_str()),
            format!("lr={}", o.learning_rate),
            format!("beta1={}", o.beta1),
            format!("beta2={}", o.beta2),
            format!("eps={}", o.epsilon),
            format!("clip={}", opt_f64(o.clip_norm)),
            format!("step={}", o.step_count),
            format!("updates={}", self.meta.updates),
            format!("best_valid={}", opt_f64(self.meta.best_valid_bleu)),
            format!("run_lr={}", self.meta.learning_rate),
            format!("valid_freq={}", self.meta.validation_frequency),
            format!(
                "mode={}",
                match self.meta.mode {
                    TrainMode::Scratch => "scratch",
                    TrainMode::Finetune => "finetune",
                }
            ),
        ];
        let vocab: Vec<String> = self.vocab.tokens().iter().map(|t| escape(t)).collect();
        header.push(format!("vocab={}", vocab.join(",")));
        let entries: Vec<String> = manifest
            .iter()
            .map(|(name, t)| format!("{name}:{}:{}", t.rows(), t.cols()))
            .collect();
        header.push(format!("tensors={}", entries.join(",")));
        s.push_str(&header.join(" "));
        s.push_str("\n\n");
        for (_, t) in &manifest {
            for r in 0..t.rows() {
                let row: Vec<String> = t.row(r).iter().map(|&x| format_value(x)).collect();
                writeln!(s, "{}", row.join(" ")).expect("writing to a string");
            }
        }
        s.push_str("END\n");
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        if !text.is_empty() && !text.ends_with('\n') {
            return Err(Error::CheckpointPayload(format!(
                "file truncated after {} bytes (no final newline)",
                text.len()
            )));
        }
        let mut lines = text.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::CheckpointHeader("empty file".into()))?;
        match first.split_once(' ') {
            Some((MAGIC, VERSION)) => {}
            Some((MAGIC, other)) => return Err(Error::CheckpointVersion(other.to_string())),
            _ => return Err(Error::CheckpointHeader(format!("bad magic line `{first}`"))),
        }
        let header_line = lines
            .next()
            .ok_or_else(|| Error::CheckpointHeader("missing header line".into()))?;
        let mut header = BTreeMap::new();
        for field in header_line.split(' ') {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::CheckpointHeader(format!("malformed field `{field}`")))?;
            header.insert(k, v);
        }
        let h = Header(&header);
        if lines.next() != Some("") {
            return Err(Error::CheckpointHeader("expected blank line after header".into()));
        }

        let model = ModelConfig {
            vocab_size: h.parse("vocab_size")?,
            embed_dim: h.parse("embed_dim")?,
            hidden_dim: h.parse("hidden_dim")?,
            max_decode_len: h.parse("max_decode_len")?,
        };
        model
            .validate()
            .map_err(|e| Error::CheckpointHeader(e.to_string()))?;
        let vocab = Vocab::from_tokens(
            h.get("vocab")?
                .split(',')
                .skip(crate::data::RESERVED.len())
                .map(unescape),
        );
        if vocab.len() != model.vocab_size {
            return Err(Error::CheckpointHeader(format!(
                "vocabulary lists {} tokens, vocab_size is {}",
                vocab.len(),
                model.vocab_size
            )));
        }
        let reg = RegConfig {
            lambda_map_l2: h.parse("reg.lambda")?,
            dropout: h.retention("reg.dropout")?,
            tuneout: h.retention("reg.tuneout")?,
        };

        // Payload.
        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        for entry in h.get("tensors")?.split(',') {
            let mut parts = entry.rsplitn(3, ':');
            let (cols, rows, name) = match (parts.next(), parts.next(), parts.next()) {
                (Some(c), Some(r), Some(n)) => (c, r, n),
                _ => return Err(Error::CheckpointHeader(format!("malformed manifest entry `{entry}`"))),
            };
            let parse_dim = |s: &str| {
                s.parse::<usize>()
                    .ok()
                    .filter(|&d| d > 0)
                    .ok_or_else(|| Error::CheckpointHeader(format!("bad dimension in `{entry}`")))
            };
            let (rows, cols) = (parse_dim(rows)?, parse_dim(cols)?);
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let line = lines.next().ok_or_else(|| {
                    Error::CheckpointPayload(format!("payload ends inside `{name}` after {r} of {rows} rows"))
                })?;
                if line == "END" {
                    return Err(Error::CheckpointPayload(format!(
                        "`END` inside `{name}` after {r} of {rows} rows"
                    )));
                }
                let before = data.len();
                for v in line.split(' ') {
                    let x: f64 = v.parse().map_err(|_| {
                        Error::CheckpointPayload(format!("unparsable value `{v}` in `{name}` row {r}"))
                    })?;
                    data.push(x);
                }
                let found = data.len() - before;
                if found != cols {
                    return Err(Error::CheckpointDimension {
                        name: name.to_string(),
                        declared: (rows, cols),
                        found: (r + 1, found),
                    });
                }
            }
            let t = Tensor::from_vec(rows, cols, data).expect("length checked");
            t.ensure_finite(name)?;
            tensors.push((name.to_string(), t));
        }
        match lines.next() {
            Some("END") => {}
            Some(other) => {
                return Err(Error::CheckpointPayload(format!(
                    "expected `END` after the last tensor, found `{}`",
                    other.chars().take(40).collect::<String>()
                )))
            }
            None => return Err(Error::CheckpointPayload("missing `END` line".into())),
        }
        if let Some(extra) = lines.next() {
            return Err(Error::CheckpointPayload(format!(
                "trailing content after `END`: `{}`",
                extra.chars().take(40).collect::<String>()
            )));
        }

        let mut by_name: BTreeMap<String, Tensor> = tensors.into_iter().collect();
        let mut take_set = |prefix: &str, required: bool| -> Result<Option<TensorSet>> {
            let present = Param::ALL
                .iter()
                .filter(|p| by_name.contains_key(&format!("{prefix}.{}", p.name())))
                .count();
            if present == 0 && !required {
                return Ok(None);
            }
            Param::ALL
                .iter()
                .map(|p| {
                    let name = format!("{prefix}.{}", p.name());
                    let t = by_name
                        .remove(&name)
                        .ok_or_else(|| Error::CheckpointHeader(format!("manifest lacks `{name}`")))?;
                    let want = p.shape(&model.dims());
                    if t.shape() != want {
                        return Err(Error::CheckpointDimension {
                            name,
                            declared: want,
                            found: t.shape(),
                        });
                    }
                    Ok(t)
                })
                .collect::<Result<TensorSet>>()
                .map(Some)
        };
        let live = take_set("live", true)?.expect("required");
        let prior = take_set("prior", false)?;
        let delta = take_set("delta", false)?;
        let m = take_set("adam.m", false)?;
        let v = take_set("adam.v", false)?;
        if let Some(name) = by_name.keys().next() {
            return Err(Error::CheckpointHeader(format!("unknown tensor `{name}`")));
        }
        let params = ParamBundle::from_parts(model.dims(), live, prior, delta)
            .map_err(|e| Error::CheckpointHeader(e.to_string()))?;

        let moments = match (m, v) {
            (Some(m), Some(v)) => Some((m, v)),
            (None, None) => None,
            _ => return Err(Error::CheckpointHeader("Adam moments must come in pairs".into())),
        };
        let optimizer = OptimizerState {
            kind: OptimizerKind::parse(h.get("optimizer")?).map_err(|e| Error::CheckpointHeader(e.to_string()))?,
            learning_rate: h.parse("lr")?,
            beta1: h.parse("beta1")?,
            beta2: h.parse("beta2")?,
            epsilon: h.parse("eps")?,
            clip_norm: h.optional("clip")?,
            step_count: h.parse("step")?,
            moments,
        };
        let meta = TrainingMeta {
            updates: h.parse("updates")?,
            best_valid_bleu: h.optional("best_valid")?,
            learning_rate: h.parse("run_lr")?,
            validation_frequency: h.parse("valid_freq")?,
            mode: match h.get("mode")? {
                "scratch" => TrainMode::Scratch,
                "finetune" => TrainMode::Finetune,
                other => return Err(Error::CheckpointHeader(format!("unknown mode `{other}`"))),
            },
        };
        Ok(Checkpoint {
            model,
            vocab,
            params,
            reg,
            optimizer,
            meta,
        })
    }
}

struct Header<'a>(&'a BTreeMap<&'a str, &'a str>);

impl Header<'_> {
    fn get(&self, key: &str) -> Result<&str> {
        self.0
            .get(key)
            .copied()
            .ok_or_else(|| Error::CheckpointHeader(format!("missing header key `{key}`")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| Error::CheckpointHeader(format!("bad value `{v}` for `{key}`")))
    }

    fn optional(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key)? {
            "none" => Ok(None),
            _ => self.parse(key).map(Some),
        }
    }

    fn retention(&self, key: &str) -> Result<Option<Retention>> {
        let v = self.get(key)?;
        if v == "none" {
            return Ok(None);
        }
        let bad = || Error::CheckpointHeader(format!("bad retention `{v}` for `{key}`"));
        let (w, o) = v.split_once('/').ok_or_else(bad)?;
        Ok(Some(Retention {
            word: w.parse().map_err(|_| bad())?,
            other: o.parse().map_err(|_| bad())?,
        }))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{zeros_like, ModelDims};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(tuneout: bool) -> Checkpoint {
        let vocab = Vocab::from_tokens(["a", "b,c", "50%", "d"]);
        let model = ModelConfig {
            vocab_size: vocab.len(),
            embed_dim: 3,
            hidden_dim: 4,
            max_decode_len: 9,
        };
        let dims: ModelDims = model.dims();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamBundle::init(dims, &mut rng);
        params.get_mut(Param::OutB).data_mut()[0] = -0.0;
        params.get_mut(Param::OutB).data_mut()[1] = 1e-300;
        params.get_mut(Param::OutB).data_mut()[2] = 0.1 + 0.2;
        params.snapshot_prior();
        let mut optimizer = OptimizerState::adam(2.5e-4);
        if tuneout {
            params.start_tuneout().unwrap();
            for d in params.delta_mut().unwrap() {
                d.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
            }
            let mut grads = zeros_like(params.trainable());
            grads[4].data_mut()[1] = 0.3;
            optimizer.update(params.trainable_mut(), &mut grads).unwrap();
        }
        Checkpoint {
            model,
            vocab,
            params,
            reg: if tuneout { RegConfig::tuneout() } else { RegConfig::dropout_map_l2() },
            optimizer,
            meta: TrainingMeta {
                updates: 17,
                best_valid_bleu: Some(42.125),
                learning_rate: 2.5e-4,
                validation_frequency: 125,
                mode: TrainMode::Finetune,
            },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for tuneout in [false, true] {
            let ckpt = sample(tuneout);
            let path = dir.path().join("a.ckpt");
            save_checkpoint(&ckpt, &path).unwrap();
            let loaded = load_checkpoint(&path).unwrap();
            assert_eq!(loaded, ckpt);
            for (a, b) in loaded.params.effective_tensors().iter().zip(ckpt.params.effective_tensors()) {
                let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(a), bits(&b));
            }
            let again = dir.path().join("b.ckpt");
            save_checkpoint(&loaded, &again).unwrap();
            assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
        }
    }

    #[test]
    fn header_layout() {
        let text = sample(false).to_text();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("FTFORGE-CKPT v1"));
        let header = lines.next().unwrap();
        assert!(header.contains("tensors=live.E_src:8:3,live.E_tgt:8:3,live.enc.W_z:4:3"));
        assert!(header.contains("vocab=<pad>,<s>,</s>,<unk>,a,b%2Cc,50%25,d"));
        assert_eq!(lines.next(), Some(""));
        assert_eq!(text.lines().last(), Some("END"));
    }

    #[test]
    fn error_classes() {
        let text = sample(true).to_text();
        for cut in [text.len() / 2, text.len() - 5, text.find("\n\n").unwrap() + 300] {
            assert!(matches!(Checkpoint::from_text(&text[..cut]), Err(Error::CheckpointPayload(_))));
        }
        let at_line = &text[..text[..text.len() / 2].rfind('\n').unwrap() + 1];
        assert!(matches!(Checkpoint::from_text(at_line), Err(Error::CheckpointPayload(_))));

        let without_end = text.trim_end().strip_suffix("END").unwrap();
        assert!(matches!(Checkpoint::from_text(without_end), Err(Error::CheckpointPayload(_))));

        let v2 = text.replacen("FTFORGE-CKPT v1", "FTFORGE-CKPT v2", 1);
        assert!(matches!(Checkpoint::from_text(&v2), Err(Error::CheckpointVersion(v)) if v == "v2"));

        assert!(matches!(Checkpoint::from_text("garbage\n"), Err(Error::CheckpointHeader(_))));
        let no_key = text.replacen(" hidden_dim=4", "", 1);
        assert!(matches!(Checkpoint::from_text(&no_key), Err(Error::CheckpointHeader(_))));

        // Drop one value from the first payload row.
        let mut lines: Vec<&str> = text.lines().collect();
        let short_row = lines[3].rsplit_once(' ').unwrap().0.to_string();
        lines[3] = &short_row;
        let joined = lines.join("\n") + "\n";
        assert!(matches!(
            Checkpoint::from_text(&joined),
            Err(Error::CheckpointDimension { declared: (8, 3), found: (1, 2), .. })
        ));
    }
}
