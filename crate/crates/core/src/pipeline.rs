//! Run configuration, run directories with checksummed manifests, and the
//! pipeline stages behind the command-line tool.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::curation::{
    self, assign_speakers, compute_stats, filter_rl, parse_rttm, read_jsonl, scene_record,
    segment_scenes, stratify_test, write_jsonl, CuratedFile, OracleClassifier, TranscriptSegment,
};
use crate::error::{Error, Result};
use crate::eval::{
    ablation_grid, evaluate_system, isotonic_trend_test, summarize, winrate_analysis, EvalRecord,
    GroundTruth, PolicySystem, Regime, ScoredUtterance, StyleMixture, System, SystemSummary,
    TrendTest, WinRateBin,
};
use crate::grpo::{grpo_train_with, CheckpointEvent, GrpoConfig, GrpoLogRow, RlQuery};
use crate::policy::{FeatureConfig, HistorySummary, PolicyParams};
use crate::reward::RewardLogRow;
use crate::rng::derive_seed;
use crate::sft::{decompose_session, sft_fit, SftConfig, SftSample};
use crate::world::{DialogueScene, SceneRecord, StyleWorld, WorldConfig};

pub const CONFIG_VERSION: u32 = 1;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "MCLP_OUT";
pub const DEFAULT_OUT: &str = "runs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Scenes whose final turns form the RL query pool.
    pub rl_scenes: usize,
    /// Size of the SFT corpus; the RL scenes are its first members. Values
    /// below `rl_scenes` mean the SFT corpus equals the RL scenes.
    pub sft_scenes: usize,
    /// Test scenes drawn per turn count.
    pub test_per_turns: usize,
    pub n_characters: usize,
    /// Inclusive turn-count range of generated scenes.
    pub turns: [usize; 2],
    /// Apply the RL filter to the RL scenes.
    pub rl_filter: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            rl_scenes: 200,
            sft_scenes: 0,
            test_per_turns: 60,
            n_characters: 2,
            turns: [2, 6],
            rl_filter: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSettings {
    /// Zero gives one bucket per raw feature.
    pub bucket_count: usize,
    pub history: HistorySummary,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        FeatureSettings {
            bucket_count: 4096,
            history: HistorySummary::LastToken,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Training seeds of the reward ablation.
    pub ablation_seeds: Vec<u64>,
    /// Fidelities of the style-mixture reference systems added to the
    /// evaluation panel.
    pub mixture_fidelities: Vec<f64>,
    pub winrate_bootstrap: usize,
    /// Only pair utterances from different systems.
    pub cross_system_only: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            ablation_seeds: vec![0, 1, 2],
            mixture_fidelities: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            winrate_bootstrap: 2000,
            cross_system_only: false,
        }
    }
}

/// Real-data curation inputs. When both paths are unset, curation runs on
/// the synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurateSettings {
    pub rttm: Option<PathBuf>,
    pub transcripts: Option<PathBuf>,
}

impl Default for CurateSettings {
    fn default() -> Self {
        CurateSettings {
            rttm: None,
            transcripts: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub world: WorldConfig,
    pub data: DataConfig,
    pub features: FeatureSettings,
    pub sft: SftConfig,
    pub grpo: GrpoConfig,
    pub eval: EvalSettings,
    pub curate: CurateSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            seed: 0,
            world: WorldConfig::default(),
            data: DataConfig::default(),
            features: FeatureSettings::default(),
            sft: SftConfig::default(),
            grpo: GrpoConfig::default(),
            eval: EvalSettings::default(),
            curate: CurateSettings::default(),
        }
    }
}

impl RunConfig {
    /// The bundled smoke configuration.
    pub fn smoke() -> RunConfig {
        serde_json::from_str(SMOKE_JSON).expect("bundled smoke config parses")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::UnsupportedVersion {
                found: self.version,
                expected: CONFIG_VERSION,
            });
        }
        self.world.validate()?;
        self.sft.validate()?;
        self.grpo.validate()?;
        let [lo, hi] = self.data.turns;
        if lo == 0 || lo > hi || hi > self.world.max_turns {
            return Err(Error::ConfigInvalid(format!(
                "data.turns [{lo}, {hi}] must lie within [1, world.max_turns]"
            )));
        }
        if self.data.n_characters == 0 || self.data.n_characters > self.world.n_styles {
            return Err(Error::ConfigInvalid(
                "data.n_characters must lie in [1, world.n_styles]".into(),
            ));
        }
        if self.data.rl_scenes == 0 || self.data.test_per_turns == 0 {
            return Err(Error::ConfigInvalid(
                "data.rl_scenes and data.test_per_turns must be positive".into(),
            ));
        }
        if self
            .eval
            .mixture_fidelities
            .iter()
            .any(|f| !(0.0..=1.0).contains(f))
        {
            return Err(Error::ConfigInvalid("mixture fidelities must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Applies `key=value` overrides addressed by dotted paths. Values parse
    /// as JSON when possible and as plain strings otherwise.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<RunConfig> {
        let mut doc = serde_json::to_value(self)?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::ConfigInvalid(format!("override {item:?} lacks '='")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
            set_path(&mut doc, key, value)?;
        }
        Ok(serde_json::from_value(doc)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(s)?;
        Ok(cfg)
    }

    /// Hex prefix of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let canon = serde_json::to_string(self)?;
        Ok(hex::encode(Sha256::digest(canon.as_bytes()))[..16].to_string())
    }

    pub fn feature_config(&self) -> FeatureConfig {
        let mut f = FeatureConfig {
            instruction_vocab: self.world.instruction_vocab,
            text_vocab: self.world.text_vocab,
            audio_vocab: self.world.audio_vocab,
            bucket_count: self.features.bucket_count,
            history: self.features.history,
        };
        if f.bucket_count == 0 {
            f.bucket_count = f.raw_size();
        }
        f
    }

    fn stage_seed(&self, stage: u64, extra: u64) -> u64 {
        derive_seed(self.seed, &[stage, extra])
    }
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::ConfigInvalid(format!("{key}: {part:?} is not inside an object")))?;
        if !obj.contains_key(*part) {
            return Err(Error::ConfigInvalid(format!("unknown config key {key:?}")));
        }
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.get_mut(*part).unwrap();
    }
    unreachable!("split yields at least one part")
}

pub const SMOKE_JSON: &str = include_str!("../../../configs/smoke.json");

const STAGE_WORLD: u64 = 1;
const STAGE_TRAIN: u64 = 2;
const STAGE_TEST: u64 = 3;
const STAGE_SFT: u64 = 4;
const STAGE_GRPO: u64 = 5;
const STAGE_EVAL: u64 = 6;
const STAGE_WINRATE: u64 = 7;
const STAGE_ABLATE: u64 = 8;

pub const WORLD_FILE: &str = "world.json";
pub const TRAIN_FILE: &str = "train_scenes.jsonl";
pub const TEST_FILE: &str = "test_scenes.jsonl";
pub const RL_FILE: &str = "rl_scenes.jsonl";
pub const SFT_POLICY: &str = "sft_policy.json";
pub const SFT_LOG: &str = "sft_log.csv";
pub const GRPO_POLICY: &str = "grpo_policy.json";
pub const GRPO_LOG: &str = "grpo_log.csv";
pub const REWARD_LOG: &str = "reward_breakdown.jsonl";
pub const GROUP_LOG: &str = "groups.jsonl";
pub const EVAL_RECORDS: &str = "eval_records.jsonl";
pub const TABLE1: &str = "table1.csv";
pub const WINRATE_CSV: &str = "winrate.csv";
pub const TREND_FILE: &str = "winrate_trend.json";
pub const TABLE3: &str = "table3.csv";
pub const ABLATION_LOG: &str = "ablation_log.csv";
pub const CURATED_SCENES: &str = "curated_scenes.jsonl";
pub const STATS_CSV: &str = "dataset_stats.csv";
pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    /// Relative path to lowercase hex SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// A run directory named by the config hash.
#[derive(Debug)]
pub struct Run {
    pub config: RunConfig,
    pub dir: PathBuf,
    manifest: Manifest,
}

impl Run {
    /// Opens (creating if needed) `root/<config hash>` and records the
    /// effective configuration.
    pub fn open(config: RunConfig, root: &Path) -> Result<Run> {
        config.validate()?;
        let hash = config.hash()?;
        let dir = root.join(&hash);
        Run::open_at(config, dir)
    }

    /// Like [`Run::open`] but with an explicit directory.
    pub fn open_at(config: RunConfig, dir: PathBuf) -> Result<Run> {
        config.validate()?;
        let hash = config.hash()?;
        fs::create_dir_all(&dir)?;
        let mpath = dir.join(MANIFEST);
        let manifest = if mpath.exists() {
            let m: Manifest = serde_json::from_str(&fs::read_to_string(&mpath)?)?;
            if m.config_hash != hash {
                return Err(Error::ConfigInvalid(format!(
                    "run directory {} belongs to config {}, not {hash}",
                    dir.display(),
                    m.config_hash
                )));
            }
            m
        } else {
            Manifest {
                config_hash: hash,
                seed: config.seed,
                artifacts: BTreeMap::new(),
            }
        };
        let mut run = Run {
            config,
            dir,
            manifest,
        };
        let text = run.config.to_json()?;
        run.write(CONFIG_FILE, text.as_bytes())?;
        Ok(run)
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Fails if an existing file no longer matches its recorded checksum.
    fn verify(&self, name: &str) -> Result<()> {
        let path = self.path(name);
        if let Some(expected) = self.manifest.artifacts.get(name) {
            if path.exists() && sha256_file(&path)? != *expected {
                return Err(Error::ChecksumMismatch(path));
            }
        }
        Ok(())
    }

    /// Writes an artifact and records its checksum.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        self.verify(name)?;
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.manifest
            .artifacts
            .insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
        let m = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(self.path(MANIFEST), m)?;
        Ok(())
    }

    /// Reads an input artifact, checking it against the manifest.
    pub fn read(&self, name: &str) -> Result<Vec<u8>> {
        let path = self.path(name);
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        self.verify(name)?;
        Ok(fs::read(path)?)
    }

    fn read_string(&self, name: &str) -> Result<String> {
        String::from_utf8(self.read(name)?)
            .map_err(|e| Error::ConfigInvalid(format!("{name} is not UTF-8: {e}")))
    }

    fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        self.write(name, &bytes)
    }

    fn write_jsonl<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, rows)?;
        self.write(name, &buf)
    }

    fn read_jsonl<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<Vec<T>> {
        read_jsonl(BufReader::new(&self.read(name)?[..]))
    }

    fn load_world(&self) -> Result<StyleWorld> {
        StyleWorld::load_json(&self.read_string(WORLD_FILE)?)
    }

    fn load_scenes(&self, name: &str) -> Result<Vec<DialogueScene>> {
        self.read_jsonl::<SceneRecord>(name)?
            .iter()
            .map(DialogueScene::from_record)
            .collect()
    }

    fn load_policy(&self, name: &str) -> Result<PolicyParams> {
        PolicyParams::load_json(&self.read_string(name)?)
    }

    /// Draws the world, the training corpus and the stratified test set.
    pub fn world_gen(&mut self) -> Result<()> {
        let cfg = &self.config;
        let world = StyleWorld::generate(&cfg.world, cfg.stage_seed(STAGE_WORLD, 0))?;
        let [lo, hi] = cfg.data.turns;
        let span = hi - lo + 1;
        let n_train = cfg.data.rl_scenes.max(cfg.data.sft_scenes);
        let scene = |stage: u64, i: usize| {
            world.sample_scene(lo + i % span, cfg.data.n_characters, cfg.stage_seed(stage, i as u64))
        };
        let train: Vec<DialogueScene> = (0..n_train)
            .map(|i| scene(STAGE_TRAIN, i))
            .collect::<Result<_>>()?;
        // A pool a quarter larger than needed, stratified down to exact counts.
        let pool_size = span * (cfg.data.test_per_turns + cfg.data.test_per_turns.div_ceil(4));
        let pool: Vec<DialogueScene> = (0..pool_size)
            .map(|i| scene(STAGE_TEST, i))
            .collect::<Result<_>>()?;
        let train_sources: HashSet<String> = train.iter().map(|s| s.source_id.clone()).collect();
        let test = stratify_test(
            &pool,
            cfg.data.test_per_turns,
            cfg.data.turns,
            cfg.stage_seed(STAGE_TEST, u64::MAX),
            &train_sources,
        )?;
        let world_json = world.save_json()?;
        self.write(WORLD_FILE, world_json.as_bytes())?;
        let train_rec: Vec<SceneRecord> = train.iter().map(DialogueScene::to_record).collect();
        self.write_jsonl(TRAIN_FILE, &train_rec)?;
        let test_rec: Vec<SceneRecord> = test.iter().map(DialogueScene::to_record).collect();
        self.write_jsonl(TEST_FILE, &test_rec)
    }

    /// Real-data mode segments and aligns transcripts; synthetic mode
    /// filters the RL scenes out of the training corpus.
    pub fn data_curate(&mut self) -> Result<()> {
        match (&self.config.curate.rttm, &self.config.curate.transcripts) {
            (Some(rttm), Some(tr)) => {
                let (rttm, tr) = (rttm.clone(), tr.clone());
                self.curate_real(&rttm, &tr)
            }
            (None, None) => {
                let train = self.load_scenes(TRAIN_FILE)?;
                let rl_pool = &train[..self.config.data.rl_scenes.min(train.len())];
                let rl = if self.config.data.rl_filter {
                    let oracle = OracleClassifier {
                        neutral_styles: self.config.world.neutral_styles.clone(),
                    };
                    filter_rl(rl_pool, &oracle)?
                } else {
                    rl_pool.to_vec()
                };
                if rl.is_empty() {
                    return Err(Error::ConfigInvalid("the RL filter kept no scenes".into()));
                }
                let rec: Vec<SceneRecord> = rl.iter().map(DialogueScene::to_record).collect();
                self.write_jsonl(RL_FILE, &rec)
            }
            _ => Err(Error::ConfigInvalid(
                "curate.rttm and curate.transcripts must be set together".into(),
            )),
        }
    }

    fn curate_real(&mut self, rttm_path: &Path, transcripts: &Path) -> Result<()> {
        let missing = |p: &Path| Error::MissingArtifact(p.to_path_buf());
        let rttm_text = fs::read_to_string(rttm_path).map_err(|_| missing(rttm_path))?;
        let rttm = parse_rttm(&rttm_text)?;
        let file = fs::File::open(transcripts).map_err(|_| missing(transcripts))?;
        let mut segs: Vec<(String, TranscriptSegment)> =
            read_jsonl::<TranscriptLine>(BufReader::new(file))?
                .into_iter()
                .map(|l| {
                    (
                        l.file_id.unwrap_or_default(),
                        TranscriptSegment {
                            text: l.text,
                            start: l.start,
                            end: l.end,
                            speaker: l.speaker,
                        },
                    )
                })
                .collect();
        segs.sort_by(|a, b| a.0.cmp(&b.0));
        let mut files = Vec::new();
        let mut records = Vec::new();
        let mut i = 0;
        while i < segs.len() {
            let fid = segs[i].0.clone();
            let j = segs[i..].iter().position(|s| s.0 != fid).map_or(segs.len(), |k| i + k);
            let mut group: Vec<TranscriptSegment> = segs[i..j].iter().map(|s| s.1.clone()).collect();
            group.sort_by(|a, b| a.start.total_cmp(&b.start));
            let file_rttm: Vec<_> = rttm
                .iter()
                .filter(|r| fid.is_empty() || r.file_id == fid)
                .cloned()
                .collect();
            let needs_speakers = group.iter().any(|s| s.speaker.is_none());
            if needs_speakers {
                group = assign_speakers(&group, &file_rttm);
            }
            let scenes = segment_scenes(&group)?;
            let label = if fid.is_empty() { "audio" } else { fid.as_str() };
            records.extend(scenes.iter().map(|s| scene_record(label, s)));
            files.push(CuratedFile {
                file_id: label.to_string(),
                scenes,
            });
            i = j;
        }
        self.write_jsonl(CURATED_SCENES, &records)?;
        let mut buf = Vec::new();
        curation::write_stats_csv(&mut buf, &compute_stats(&files))?;
        self.write(STATS_CSV, &buf)
    }

    fn sft_data(&self, train: &[DialogueScene]) -> Vec<SftSample> {
        let n = self.config.data.sft_scenes.max(self.config.data.rl_scenes);
        train[..n.min(train.len())]
            .iter()
            .flat_map(decompose_session)
            .collect()
    }

    fn sft_config(&self) -> SftConfig {
        SftConfig {
            seed: self.config.stage_seed(STAGE_SFT, self.config.sft.seed),
            ..self.config.sft
        }
    }

    fn grpo_config(&self, extra: u64) -> GrpoConfig {
        GrpoConfig {
            seed: self.config.stage_seed(STAGE_GRPO, self.config.grpo.seed ^ extra),
            ..self.config.grpo
        }
    }

    pub fn train_sft(&mut self) -> Result<()> {
        let train = self.load_scenes(TRAIN_FILE)?;
        let data = self.sft_data(&train);
        let p0 = PolicyParams::zeros(self.config.feature_config())?;
        let (params, curve) = sft_fit(&p0, &data, &self.sft_config())?;
        self.write(SFT_POLICY, params.save_json()?.as_bytes())?;
        self.write_csv(SFT_LOG, &curve)
    }

    fn rl_queries(&self) -> Result<Vec<RlQuery>> {
        let include = self.config.grpo.include_audio_history;
        Ok(self
            .load_scenes(RL_FILE)?
            .iter()
            .map(|s| RlQuery::from_scene(s, include))
            .collect())
    }

    pub fn train_grpo(&mut self) -> Result<()> {
        let sft = self.load_policy(SFT_POLICY)?;
        let world = self.load_world()?;
        let queries = self.rl_queries()?;
        let cfg = self.grpo_config(0);
        let mut saved: Vec<(String, String)> = Vec::new();
        let result = grpo_train_with(&sft, &queries, &cfg, world.oracle(), &world.decode, &mut |ev, p| {
            let name = match ev {
                CheckpointEvent::Periodic(n) => format!("checkpoints/grpo_iter_{n:05}.json"),
                CheckpointEvent::LastGood(n) => format!("checkpoints/grpo_last_good_{n:05}.json"),
            };
            saved.push((name, p.save_json()?));
            Ok(())
        });
        for (name, text) in &saved {
            self.write(name, text.as_bytes())?;
        }
        let out = result?;
        self.write(GRPO_POLICY, out.params.save_json()?.as_bytes())?;
        self.write_csv(GRPO_LOG, &out.log)?;
        let rewards: Vec<RewardLogRow> = out
            .groups
            .iter()
            .flat_map(|g| {
                g.rewards.iter().enumerate().map(move |(i, b)| RewardLogRow {
                    iter: g.iter,
                    group_id: g.query_id.clone(),
                    rollout_id: i,
                    breakdown: *b,
                })
            })
            .collect();
        self.write_jsonl(REWARD_LOG, &rewards)?;
        self.write_jsonl(GROUP_LOG, &out.groups)
    }

    /// Scores ground truth, the mixture panel and both trained policies on
    /// the test set in both regimes.
    pub fn eval(&mut self) -> Result<()> {
        let world = self.load_world()?;
        let test = self.load_scenes(TEST_FILE)?;
        let mut systems: Vec<Box<dyn System + '_>> = vec![Box::new(GroundTruth)];
        for &f in &self.config.eval.mixture_fidelities {
            systems.push(Box::new(StyleMixture {
                name: format!("mixture_{f}"),
                model: world.oracle(),
                fidelity: f,
            }));
        }
        for (name, file) in [("sft", SFT_POLICY), ("grpo", GRPO_POLICY)] {
            systems.push(Box::new(PolicySystem {
                name: name.into(),
                params: self.load_policy(file)?,
                temperature: 1.0,
            }));
        }
        let seed = self.config.stage_seed(STAGE_EVAL, 0);
        let mut records = Vec::new();
        for sys in &systems {
            for regime in Regime::BOTH {
                records.extend(evaluate_system(
                    sys.as_ref(),
                    &test,
                    regime,
                    world.oracle(),
                    &world.decode,
                    seed,
                )?);
            }
        }
        drop(systems);
        self.write_jsonl(EVAL_RECORDS, &records)?;
        self.write_csv(TABLE1, &summarize(&records))
    }

    /// Win rate against |ΔMCLP| over the with-history evaluation records.
    pub fn winrate(&mut self) -> Result<(Vec<WinRateBin>, TrendTest)> {
        let records: Vec<EvalRecord> = self.read_jsonl(EVAL_RECORDS)?;
        let points: Vec<ScoredUtterance> = records
            .iter()
            .filter(|r| r.regime == Regime::WithHistory)
            .map(ScoredUtterance::from)
            .collect();
        let bins = winrate_analysis(&points, self.config.eval.cross_system_only)?;
        let trend = isotonic_trend_test(
            &bins,
            self.config.eval.winrate_bootstrap,
            self.config.stage_seed(STAGE_WINRATE, 0),
        );
        self.write_csv(WINRATE_CSV, &bins)?;
        let t = serde_json::to_string_pretty(&trend)?;
        self.write(TREND_FILE, t.as_bytes())?;
        Ok((bins, trend))
    }

    /// Reward ablation over every configured training seed.
    pub fn ablate(&mut self) -> Result<Vec<AblationRow>> {
        let sft = self.load_policy(SFT_POLICY)?;
        let world = self.load_world()?;
        let queries = self.rl_queries()?;
        let test = self.load_scenes(TEST_FILE)?;
        let mut rows = Vec::new();
        let mut logs = Vec::new();
        for &s in &self.config.eval.ablation_seeds.clone() {
            let cfg = self.grpo_config(derive_seed(s, &[STAGE_ABLATE]));
            let rep = ablation_grid(
                &sft,
                &queries,
                &test,
                &cfg,
                world.oracle(),
                &world.decode,
                self.config.stage_seed(STAGE_ABLATE, s),
            )?;
            rows.extend(rep.summaries.iter().map(|m| AblationRow::new(s, m)));
            for (name, log) in &rep.logs {
                logs.extend(log.iter().map(|r| AblationLogRow::new(s, name, r)));
            }
        }
        self.write_csv(TABLE3, &rows)?;
        self.write_csv(ABLATION_LOG, &logs)?;
        Ok(rows)
    }

    /// world-gen, data-curate, train-sft, train-grpo, eval and winrate.
    pub fn run_all(&mut self) -> Result<()> {
        self.world_gen()?;
        self.data_curate()?;
        self.train_sft()?;
        self.train_grpo()?;
        self.eval()?;
        self.winrate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
struct TranscriptLine {
    text: String,
    start: f64,
    end: f64,
    #[serde(default)]
    speaker: Option<String>,
    #[serde(default)]
    file_id: Option<String>,
}

/// One row of the reward-ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub system: String,
    pub regime: Regime,
    pub n: usize,
    pub cer: f64,
    pub wer: f64,
    pub mclp: f64,
    pub oracle_similarity: f64,
}

impl AblationRow {
    fn new(seed: u64, s: &SystemSummary) -> Self {
        AblationRow {
            seed,
            system: s.system.clone(),
            regime: s.regime,
            n: s.n,
            cer: s.cer,
            wer: s.wer,
            mclp: s.mclp,
            oracle_similarity: s.oracle_similarity,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct AblationLogRow {
    seed: u64,
    system: String,
    iter: usize,
    mean_reward: f64,
    mean_mclp: f64,
    mean_cer: f64,
    gated_frac: f64,
    mean_kl: f64,
    loss: f64,
}

impl AblationLogRow {
    fn new(seed: u64, system: &str, r: &GrpoLogRow) -> Self {
        AblationLogRow {
            seed,
            system: system.to_string(),
            iter: r.iter,
            mean_reward: r.mean_reward,
            mean_mclp: r.mean_mclp,
            mean_cer: r.mean_cer,
            gated_frac: r.gated_frac,
            mean_kl: r.mean_kl,
            loss: r.loss,
        }
    }
}

/// Output root from the environment, or `runs`.
pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}
