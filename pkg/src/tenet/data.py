"""WAV I/O, synthetic noisy datasets, manifests and the SI-SDR report."""

from __future__ import annotations

import csv
import json
import os
import wave
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .augment import item_seed
from .dsp import DEFAULT_SAMPLE_RATE, Waveform
from .errors import DegenerateInputError, FormatError, InvalidArgumentError
from .objectives import si_sdr

MANIFEST_HEADER = ("id", "noisy_path", "clean_path")
CLEAN_SOURCES = ("multitone", "chirp", "file-dir")
NOISE_SOURCES = ("white", "pink", "babble-sum", "file-dir")
PEAK_LIMIT = 0.9


# ---------------------------------------------------------------------------
# WAV


def read_wav(path, sample_rate: int | None = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Read a mono 16-bit PCM WAV file; samples are scaled by 1/32768.

    ``sample_rate=None`` accepts any rate instead of requiring 16 kHz.
    """
    try:
        with wave.open(str(path), "rb") as fh:
            channels, width, rate = fh.getnchannels(), fh.getsampwidth(), fh.getframerate()
            frames = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise FormatError(f"{path}: codec: only PCM RIFF/WAVE is supported ({exc})") from exc
    except EOFError as exc:
        raise FormatError(f"{path}: truncated file") from exc
    if channels != 1:
        raise FormatError(f"{path}: channels: expected 1, got {channels}")
    if width != 2:
        raise FormatError(f"{path}: sample width: expected 16-bit, got {8 * width}-bit")
    if sample_rate is not None and rate != sample_rate:
        raise FormatError(f"{path}: sample rate: expected {sample_rate} Hz, got {rate} Hz")
    data = np.frombuffer(frames, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(data, rate)


def quantize(samples) -> np.ndarray:
    scaled = np.asarray(samples, dtype=np.float64) * 32768.0
    rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)  # half away from zero
    return np.clip(rounded, -32768, 32767).astype("<i2")


def write_wav(path, w) -> None:
    if not isinstance(w, Waveform):
        w = Waveform(w)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(quantize(w.samples).tobytes())


# ---------------------------------------------------------------------------
# mixing


def tile_noise(noise: np.ndarray, length: int, sample_rate: int = DEFAULT_SAMPLE_RATE,
               fade_s: float = 0.01) -> np.ndarray:
    """Repeat ``noise`` up to ``length`` samples, crossfading each seam over ``fade_s``."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.size >= length:
        return noise[:length].copy()
    fade = min(int(round(fade_s * sample_rate)), noise.size // 2)
    out = noise.copy()
    ramp = np.linspace(0.0, 1.0, fade + 2)[1:-1] if fade else np.zeros(0)
    while out.size < length:
        if fade:
            seam = out[-fade:] * (1.0 - ramp) + noise[:fade] * ramp
            out = np.concatenate([out[:-fade], seam, noise[fade:]])
        else:
            out = np.concatenate([out, noise])
    return out[:length]


def mix_at_snr(clean, noise, snr_db: float, return_gain: bool = False):
    """``clean + g * noise`` with ``g`` chosen so the mixture has the requested SNR."""
    sr = clean.sample_rate if isinstance(clean, Waveform) else DEFAULT_SAMPLE_RATE
    c = clean.samples if isinstance(clean, Waveform) else np.asarray(clean, dtype=np.float64)
    n = noise.samples if isinstance(noise, Waveform) else np.asarray(noise, dtype=np.float64)
    if not np.isfinite(snr_db):
        raise InvalidArgumentError(f"snr_db must be finite, got {snr_db}")
    n = tile_noise(n, c.size, sr)
    p_clean = np.mean(c**2)
    p_noise = np.mean(n**2)
    if p_clean == 0:
        raise DegenerateInputError("clean signal is silent")
    if p_noise == 0:
        raise DegenerateInputError("noise signal is silent")
    gain = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    noisy = c + gain * n
    if isinstance(clean, Waveform):
        noisy = Waveform(noisy, sr)
    return (noisy, gain) if return_gain else noisy


def measured_snr(clean, noisy) -> float:
    c = np.asarray(clean, dtype=np.float64)
    resid = np.asarray(noisy, dtype=np.float64) - c
    return float(10.0 * np.log10(np.mean(c**2) / np.mean(resid**2)))


# ---------------------------------------------------------------------------
# synthetic sources


def multitone(rng, length, sample_rate=DEFAULT_SAMPLE_RATE, count=3, band=(200.0, 3400.0)):
    t = np.arange(length) / sample_rate
    freqs = rng.uniform(*band, size=count)
    amps = rng.uniform(0.2, 1.0, size=count)
    phases = rng.uniform(0, 2 * np.pi, size=count)
    sig = (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None])).sum(axis=0)
    return 0.5 * sig / np.abs(sig).max()


def chirp(rng, length, sample_rate=DEFAULT_SAMPLE_RATE):
    t = np.arange(length) / sample_rate
    f0, f1 = rng.uniform(200.0, 1000.0), rng.uniform(1500.0, 3400.0)
    dur = length / sample_rate
    phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / dur * t**2)
    return 0.5 * np.sin(phase + rng.uniform(0, 2 * np.pi))


def white_noise(rng, length):
    return rng.standard_normal(length)


def pink_noise(rng, length):
    spec = np.fft.rfft(rng.standard_normal(length))
    freqs = np.arange(spec.size, dtype=np.float64)
    freqs[0] = 1.0
    out = np.fft.irfft(spec / np.sqrt(freqs), n=length)
    return out / out.std()


def babble_noise(rng, length, sample_rate=DEFAULT_SAMPLE_RATE, talkers=6):
    t = np.arange(length) / sample_rate
    out = np.zeros(length)
    for _ in range(talkers):
        envelope = 0.5 * (1 + np.sin(2 * np.pi * rng.uniform(2, 6) * t + rng.uniform(0, 2 * np.pi)))
        out += envelope * multitone(rng, length, sample_rate, count=4, band=(100.0, 4000.0))
    return out / out.std()


def _wav_files(directory):
    files = sorted(Path(directory).glob("*.wav"))
    if not files:
        raise InvalidArgumentError(f"no .wav files in {directory}")
    return files


def _file_segment(rng, directory, length, sample_rate):
    files = _wav_files(directory)
    samples = read_wav(files[int(rng.integers(len(files)))], sample_rate).samples
    if samples.size <= length:
        return tile_noise(samples, length, sample_rate)
    start = int(rng.integers(0, samples.size - length + 1))
    return samples[start : start + length]


# ---------------------------------------------------------------------------
# manifests


@dataclass
class Manifest:
    rows: list  # (id, noisy_path, clean_path), paths relative to root
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        self.root = Path(self.root)
        self.rows = [tuple(r) for r in self.rows]
        ids = [r[0] for r in self.rows]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise InvalidArgumentError(f"duplicate manifest ids: {dupes}")

    def __len__(self):
        return len(self.rows)

    @property
    def ids(self):
        return [r[0] for r in self.rows]

    def resolve(self, rel) -> Path:
        return self.root / rel

    def missing(self) -> list:
        return [(r[0], p) for r in self.rows for p in r[1:] if not self.resolve(p).exists()]

    def load_pairs(self, sample_rate: int = DEFAULT_SAMPLE_RATE):
        """Yield (id, noisy Waveform, clean Waveform)."""
        for item_id, noisy, clean in self.rows:
            yield item_id, read_wav(self.resolve(noisy), sample_rate), read_wav(
                self.resolve(clean), sample_rate)


def write_manifest(path, manifest: Manifest) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for row in manifest.rows:
            writer.writerow([row[0], Path(row[1]).as_posix(), Path(row[2]).as_posix()])
    os.replace(tmp, path)


def read_manifest(path) -> Manifest:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != MANIFEST_HEADER:
            raise FormatError(f"{path}: header must be {','.join(MANIFEST_HEADER)}, got {header}")
        rows = [tuple(r) for r in reader if r]
    bad = [r for r in rows if len(r) != 3]
    if bad:
        raise FormatError(f"{path}: malformed rows {bad[:3]}")
    return Manifest(rows, path.parent)


# ---------------------------------------------------------------------------
# dataset synthesis


@dataclass
class SynthSpec:
    num_items: int = 8
    duration_s: float = 1.0
    snr_list_db: tuple = (0.0, 5.0, 10.0, 15.0)
    clean_source: str = "multitone"
    noise_source: tuple = ("white",)  # cycled per item
    seed: int = 0
    splits: dict | None = None  # e.g. {"train": 200, "val": 20, "test": 20}
    clean_dir: str | None = None
    noise_dir: str | None = None
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if isinstance(self.noise_source, str):
            self.noise_source = tuple(s.strip() for s in self.noise_source.split(","))
        self.noise_source = tuple(self.noise_source)
        self.snr_list_db = tuple(float(v) for v in np.atleast_1d(self.snr_list_db))
        if self.duration_s <= 0:
            raise InvalidArgumentError("duration_s must be positive")
        if not self.snr_list_db or not all(np.isfinite(self.snr_list_db)):
            raise InvalidArgumentError("snr_list_db must be a non-empty list of finite values")
        if self.clean_source not in CLEAN_SOURCES:
            raise InvalidArgumentError(f"clean_source must be one of {CLEAN_SOURCES}")
        for src in self.noise_source:
            if src not in NOISE_SOURCES:
                raise InvalidArgumentError(f"noise_source {src!r} not in {NOISE_SOURCES}")
        if self.clean_source == "file-dir" and not self.clean_dir:
            raise InvalidArgumentError("clean_source=file-dir needs clean_dir")
        if "file-dir" in self.noise_source and not self.noise_dir:
            raise InvalidArgumentError("noise_source=file-dir needs noise_dir")


def synth_item(spec: SynthSpec, index: int, stream: int = 0):
    """Generate (clean, noisy, snr_db, noise_kind) for item ``index`` of a split."""
    rng = np.random.default_rng(item_seed(spec.seed, stream, index))
    sr = spec.sample_rate
    length = int(round(spec.duration_s * sr))
    if spec.clean_source == "multitone":
        clean = multitone(rng, length, sr)
    elif spec.clean_source == "chirp":
        clean = chirp(rng, length, sr)
    else:
        clean = _file_segment(rng, spec.clean_dir, length, sr)
    kind = spec.noise_source[index % len(spec.noise_source)]
    if kind == "white":
        noise = white_noise(rng, length)
    elif kind == "pink":
        noise = pink_noise(rng, length)
    elif kind == "babble-sum":
        noise = babble_noise(rng, length, sr)
    else:
        noise = _file_segment(rng, spec.noise_dir, length, sr)
    snr = spec.snr_list_db[index % len(spec.snr_list_db)]
    noisy = mix_at_snr(clean, noise, snr)
    peak = max(np.abs(noisy).max(), np.abs(clean).max())
    if peak > PEAK_LIMIT:
        # common rescale keeps the SNR and avoids int16 clipping
        clean, noisy = clean * PEAK_LIMIT / peak, noisy * PEAK_LIMIT / peak
    return clean, noisy, snr, kind


def synth_split(spec: SynthSpec, out_dir, num_items: int, prefix: str = "item",
                stream: int = 0) -> Manifest:
    out_dir = Path(out_dir)
    (out_dir / "noisy").mkdir(parents=True, exist_ok=True)
    (out_dir / "clean").mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(num_items):
        clean, noisy, _, _ = synth_item(spec, i, stream)
        item_id = f"{prefix}_{i:05d}"
        noisy_rel, clean_rel = f"noisy/{item_id}.wav", f"clean/{item_id}.wav"
        write_wav(out_dir / noisy_rel, Waveform(noisy, spec.sample_rate))
        write_wav(out_dir / clean_rel, Waveform(clean, spec.sample_rate))
        rows.append((item_id, noisy_rel, clean_rel))
    manifest = Manifest(rows, out_dir)
    write_manifest(out_dir / "manifest.csv", manifest)
    return manifest


def synth_dataset(spec: SynthSpec, out_dir):
    """Write a dataset; returns a Manifest, or {split: Manifest} when ``spec.splits`` is set."""
    if not spec.splits:
        return synth_split(spec, out_dir, spec.num_items)
    return {name: synth_split(spec, Path(out_dir) / name, count, prefix=name, stream=k + 1)
            for k, (name, count) in enumerate(spec.splits.items())}


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    items: list  # dicts: id, noisy_sisdr, enhanced_sisdr, improvement
    flagged: list  # dicts: id, reason
    mean_noisy: float
    mean_enhanced: float
    mean_improvement: float

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        lines = [f"{'id':<16}{'noisy dB':>12}{'enhanced dB':>14}{'delta dB':>12}"]
        for it in self.items:
            lines.append(f"{it['id']:<16}{it['noisy_sisdr']:>12.3f}"
                         f"{it['enhanced_sisdr']:>14.3f}{it['improvement']:>12.3f}")
        lines.append(f"{'mean':<16}{self.mean_noisy:>12.3f}{self.mean_enhanced:>14.3f}"
                     f"{self.mean_improvement:>12.3f}")
        lines.append(f"items: {len(self.items)}  flagged: {len(self.flagged)}")
        for fl in self.flagged:
            lines.append(f"  flagged {fl['id']}: {fl['reason']}")
        return "\n".join(lines)


def evaluate(manifest: Manifest, enhanced_dir, eps: float = 1e-8) -> EvalReport:
    """Score noisy and enhanced (``<enhanced_dir>/<id>.wav``) files against clean."""
    enhanced_dir = Path(enhanced_dir)
    items, flagged = [], []
    for item_id, noisy, clean in manifest.load_pairs():
        path = enhanced_dir / f"{item_id}.wav"
        if not path.exists():
            flagged.append({"id": item_id, "reason": f"missing {path}"})
            continue
        enhanced = read_wav(path)
        if len(enhanced) != len(clean) or len(noisy) != len(clean):
            flagged.append({"id": item_id, "reason": f"length mismatch: enhanced {len(enhanced)}, "
                            f"noisy {len(noisy)}, clean {len(clean)}"})
            continue
        before = si_sdr(clean.samples, noisy.samples, eps)
        after = si_sdr(clean.samples, enhanced.samples, eps)
        items.append({"id": item_id, "noisy_sisdr": before, "enhanced_sisdr": after,
                      "improvement": after - before})

    def avg(key):
        return float(np.mean([it[key] for it in items])) if items else float("nan")

    return EvalReport(items, flagged, avg("noisy_sisdr"), avg("enhanced_sisdr"),
                      avg("improvement"))


def write_report_json(path, report: EvalReport) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
