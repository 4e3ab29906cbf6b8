//! Clients for the external codec round-trip and quality-label executables.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::Command;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, write_wav, AudioBuffer, WavEncoding, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Search range of the codec delay compensation, in samples.
pub const MAX_ALIGN_LAG: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecTool {
    /// Invoked as `<executable> <input.wav> <output.wav> <bitrate_kbps>`; must
    /// encode and decode in one step and write a 48 kHz WAV.
    pub executable: PathBuf,
    pub bitrates: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleTool {
    /// Invoked as `<executable> <ref.wav> <deg.wav>`; the last number printed
    /// on standard output is taken as the MOS.
    pub executable: Option<PathBuf>,
    /// Precomputed `ref_path,deg_path,mos` rows.
    pub labels_csv: Option<PathBuf>,
}

/// External tool configuration, usually parsed from the `[codecs]` and
/// `[oracle]` tables of the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolsConfig {
    #[serde(default)]
    pub codecs: BTreeMap<String, CodecTool>,
    #[serde(default)]
    pub oracle: OracleTool,
}

impl ToolsConfig {
    /// Default ladders for the two training codecs, without executables.
    pub fn default_ladders() -> BTreeMap<String, Vec<u32>> {
        BTreeMap::from([
            ("heaac".to_string(), vec![16, 20, 24, 32, 40, 48]),
            ("aac".to_string(), vec![80, 96, 128]),
        ])
    }

    /// Applies `INSE_CODEC_<ID>` and `INSE_ORACLE` environment overrides.
    /// A codec known only from the environment gets its default ladder.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) {
        let ladders = Self::default_ladders();
        for (key, value) in vars {
            if key == "INSE_ORACLE" {
                self.oracle.executable = Some(PathBuf::from(value));
            } else if let Some(id) = key.strip_prefix("INSE_CODEC_") {
                let id = id.to_ascii_lowercase();
                let exe = PathBuf::from(value);
                match self.codecs.get_mut(&id) {
                    Some(tool) => tool.executable = exe,
                    None => {
                        let bitrates = ladders.get(&id).cloned().unwrap_or_default();
                        self.codecs.insert(
                            id,
                            CodecTool {
                                executable: exe,
                                bitrates,
                            },
                        );
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct CodecClient {
    tools: BTreeMap<String, CodecTool>,
}

impl CodecClient {
    pub fn new(config: &ToolsConfig) -> Self {
        Self {
            tools: config.codecs.clone(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    /// (codec id, bitrate) for every configured ladder rung.
    pub fn ladder(&self) -> Vec<(String, u32)> {
        self.tools
            .iter()
            .flat_map(|(id, t)| t.bitrates.iter().map(move |&b| (id.clone(), b)))
            .collect()
    }

    /// Runs the codec round trip and writes `<workdir>/<stem>_<codec><kbps>.wav`,
    /// lag-aligned to the reference and trimmed or padded to its length.
    pub fn encode_decode(
        &self,
        ref_path: &Path,
        codec_id: &str,
        bitrate_kbps: u32,
        workdir: &Path,
    ) -> Result<PathBuf> {
        let tool = self.tools.get(codec_id).ok_or_else(|| {
            Error::Config(format!("no executable configured for codec `{codec_id}`"))
        })?;
        if !tool.bitrates.contains(&bitrate_kbps) {
            return Err(Error::Config(format!(
                "{bitrate_kbps} kbps is not in the `{codec_id}` ladder {:?}",
                tool.bitrates
            )));
        }
        let reference = read_wav(ref_path)?;
        reference.require_rate(SAMPLE_RATE)?;
        let stem = ref_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("excerpt");
        let raw = workdir.join(format!("{stem}_{codec_id}{bitrate_kbps}.raw.wav"));
        let out = workdir.join(format!("{stem}_{codec_id}{bitrate_kbps}.wav"));
        let output = Command::new(&tool.executable)
            .arg(ref_path)
            .arg(&raw)
            .arg(bitrate_kbps.to_string())
            .output()
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    Error::Config(format!(
                        "codec executable {} not found",
                        tool.executable.display()
                    ))
                } else {
                    Error::io(&tool.executable, e)
                }
            })?;
        if !output.status.success() {
            return Err(Error::Codec {
                codec: codec_id.into(),
                status: output.status.to_string(),
                output: format!(
                    "{}{}",
                    String::from_utf8_lossy(&output.stdout),
                    String::from_utf8_lossy(&output.stderr)
                ),
            });
        }
        let decoded = read_wav(&raw)?;
        decoded.require_rate(SAMPLE_RATE)?;
        let aligned = align_to_reference(&reference, &decoded)?;
        write_wav(&out, &aligned, WavEncoding::Int24)?;
        std::fs::remove_file(&raw).map_err(|e| Error::io(&raw, e))?;
        Ok(out)
    }
}

fn mono_mix(a: &AudioBuffer) -> Vec<f64> {
    (0..a.len())
        .map(|i| {
            (0..a.num_channels()).map(|c| a.channel(c)[i]).sum::<f64>() / a.num_channels() as f64
        })
        .collect()
}

/// Lag `l` in `[-max_lag, max_lag]` maximising `sum_n r[n] · d[n + l]`,
/// computed by FFT cross-correlation. Ties go to the smallest |lag|.
pub fn best_lag(reference: &[f64], degraded: &[f64], max_lag: usize) -> isize {
    let n = (reference.len() + degraded.len()).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let to_complex = |x: &[f64]| {
        let mut v: Vec<Complex<f64>> = x.iter().map(|&s| Complex::new(s, 0.0)).collect();
        v.resize(n, Complex::new(0.0, 0.0));
        v
    };
    let mut r = to_complex(reference);
    let mut d = to_complex(degraded);
    fwd.process(&mut r);
    fwd.process(&mut d);
    let mut x: Vec<Complex<f64>> = r.iter().zip(&d).map(|(a, b)| a.conj() * b).collect();
    inv.process(&mut x);
    let corr = |lag: isize| {
        let idx = if lag >= 0 {
            lag as usize
        } else {
            n - lag.unsigned_abs()
        };
        x[idx].re
    };
    let max_lag = max_lag as isize;
    let mut best = 0isize;
    let mut best_val = corr(0);
    for mag in 1..=max_lag {
        for lag in [mag, -mag] {
            let v = corr(lag);
            if v > best_val + 1e-12 * best_val.abs() {
                best = lag;
                best_val = v;
            }
        }
    }
    best
}

/// Shifts `degraded` by the best correlation lag and trims or zero-pads it to
/// the reference length.
pub fn align_to_reference(reference: &AudioBuffer, degraded: &AudioBuffer) -> Result<AudioBuffer> {
    let lag = best_lag(&mono_mix(reference), &mono_mix(degraded), MAX_ALIGN_LAG);
    let len = reference.len();
    let channels = (0..degraded.num_channels())
        .map(|c| {
            let src = degraded.channel(c);
            (0..len)
                .map(|i| {
                    let j = i as isize + lag;
                    if j >= 0 && (j as usize) < src.len() {
                        src[j as usize]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    AudioBuffer::new(channels, degraded.sample_rate())
}

/// Takes the last numeric token printed by the oracle.
pub fn parse_last_number(text: &str) -> Option<f64> {
    text.split(|c: char| {
        !(c.is_ascii_digit() || c == '.' || c == '-' || c == '+' || c == 'e' || c == 'E')
    })
    .filter_map(|tok| tok.parse::<f64>().ok())
    .rfind(|v| v.is_finite())
}

/// Produces MOS labels from a precomputed table or an external executable.
#[derive(Debug, Clone, Default)]
pub struct LabelOracle {
    executable: Option<PathBuf>,
    table: HashMap<(PathBuf, PathBuf), f64>,
}

/// Score given to reference/reference pairs.
pub const REF_REF_MOS: f64 = 5.0;

impl LabelOracle {
    pub fn new(config: &OracleTool) -> Result<Self> {
        let mut oracle = Self {
            executable: config.executable.clone(),
            table: HashMap::new(),
        };
        if let Some(csv) = &config.labels_csv {
            oracle.table = load_labels_csv(csv)?;
        }
        Ok(oracle)
    }

    pub fn from_table(table: HashMap<(PathBuf, PathBuf), f64>) -> Self {
        Self {
            executable: None,
            table,
        }
    }

    pub fn is_available(&self) -> bool {
        self.executable.is_some() || !self.table.is_empty()
    }

    /// MOS in [1, 5]. Identical files and paths score 5 without consulting the
    /// oracle; table rows take precedence over the executable.
    pub fn label(&self, ref_path: &Path, deg_path: &Path) -> Result<f64> {
        if ref_path == deg_path || same_audio(ref_path, deg_path)? {
            return Ok(REF_REF_MOS);
        }
        if let Some(&mos) = self
            .table
            .get(&(ref_path.to_path_buf(), deg_path.to_path_buf()))
        {
            return Ok(mos.clamp(1.0, 5.0));
        }
        let labeling = |reason: String| Error::Labeling {
            deg: deg_path.to_path_buf(),
            reason,
        };
        let exe = self
            .executable
            .as_ref()
            .ok_or_else(|| labeling("no oracle executable and no table row".into()))?;
        let output = Command::new(exe)
            .arg(ref_path)
            .arg(deg_path)
            .output()
            .map_err(|e| labeling(format!("cannot run {}: {e}", exe.display())))?;
        if !output.status.success() {
            return Err(labeling(format!(
                "oracle exited with {}: {}",
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let stdout = String::from_utf8_lossy(&output.stdout);
        let mos = parse_last_number(&stdout)
            .ok_or_else(|| labeling(format!("no score in output `{}`", stdout.trim())))?;
        if !(1.0..=5.0).contains(&mos) {
            log::warn!(
                "{}: oracle score {mos} clamped to [1, 5]",
                deg_path.display()
            );
        }
        Ok(mos.clamp(1.0, 5.0))
    }
}

fn same_audio(a: &Path, b: &Path) -> Result<bool> {
    let meta = |p: &Path| std::fs::metadata(p).map_err(|e| Error::io(p, e));
    if meta(a)?.len() != meta(b)?.len() {
        return Ok(false);
    }
    let read = |p: &Path| std::fs::read(p).map_err(|e| Error::io(p, e));
    Ok(read(a)? == read(b)?)
}

/// Reads `ref_path,deg_path,mos` rows; relative paths resolve against the CSV's directory.
pub fn load_labels_csv(path: &Path) -> Result<HashMap<(PathBuf, PathBuf), f64>> {
    #[derive(Deserialize)]
    struct Row {
        ref_path: PathBuf,
        deg_path: PathBuf,
        mos: f64,
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut out = HashMap::new();
    for row in reader.deserialize::<Row>() {
        let row = row.map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        out.insert((resolve(row.ref_path), resolve(row.deg_path)), row.mos);
    }
    Ok(out)
}
