"""Sandboxed compilation of standalone TikZ documents.

Each job gets a fresh temporary directory, the compiler runs non-interactively
with shell-escape disabled, the log is captured (tail-truncated), the PDF page
is rasterized at a fixed DPI, and the outcome is classified:

    ok               compiled, raster decodes, and the render has ink
    compile_error    nonzero exit or no PDF produced
    timeout          the compiler exceeded the configured budget
    empty_output     the render is uniform (all pixels within epsilon of the
                     background color)
    corrupted_output the raster artifact does not decode

The compiler invocation is an argument-vector template with an ``{input}``
placeholder; ``TIKZMILL_TEX`` overrides the engine binary. Rasterization is a
second argv template ({pdf}, {png}, {dpi}), autodetected from pdftoppm /
pdftocairo / ghostscript when unset. Missing binaries raise environment errors
instead of being misrecorded as sample failures.
"""

from __future__ import annotations

import json
import os
import shutil
import subprocess
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .normalize import NormalizedProgram

TEX_ENV_VAR = "TIKZMILL_TEX"

STATUS_OK = "ok"
STATUS_COMPILE_ERROR = "compile_error"
STATUS_TIMEOUT = "timeout"
STATUS_EMPTY = "empty_output"
STATUS_CORRUPTED = "corrupted_output"


class CompilerNotFoundError(RuntimeError):
    """No usable TeX engine: an environment problem, not a sample failure."""


class RasterizerNotFoundError(RuntimeError):
    """No usable PDF rasterizer available."""


class SandboxError(RuntimeError):
    """Infrastructure failure (filesystem and the like); result not recorded."""


@dataclass
class SandboxConfig:
    compiler_command: Optional[list[str]] = None
    timeout_s: float = 60.0
    render_dpi: int = 300
    max_log_bytes: int = 65536
    raster_command: Optional[list[str]] = None
    grace_s: float = 5.0
    blank_epsilon: int = 8

    def __post_init__(self) -> None:
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")
        if self.render_dpi <= 0:
            raise ValueError("render_dpi must be positive")


@dataclass
class CompileResult:
    record_id: str
    status: str
    log_text: str
    duration_ms: int
    artifact_path: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "status": self.status,
            "log_text": self.log_text,
            "duration_ms": self.duration_ms,
            "artifact_path": self.artifact_path,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "CompileResult":
        return cls(
            record_id=obj["record_id"],
            status=obj["status"],
            log_text=obj["log_text"],
            duration_ms=obj["duration_ms"],
            artifact_path=obj.get("artifact_path"),
        )


_ENGINE_TEMPLATES = {
    "pdflatex": ["-interaction=nonstopmode", "-halt-on-error", "-no-shell-escape", "{input}"],
    "lualatex": ["-interaction=nonstopmode", "-halt-on-error", "--no-shell-escape", "{input}"],
    "xelatex": ["-interaction=nonstopmode", "-halt-on-error", "-no-shell-escape", "{input}"],
    "tectonic": ["--untrusted", "{input}"],
}


def detect_compiler_command() -> Optional[list[str]]:
    override = os.environ.get(TEX_ENV_VAR)
    if override:
        name = Path(override).name
        flags = _ENGINE_TEMPLATES.get(name, _ENGINE_TEMPLATES["pdflatex"])
        return [override, *flags]
    for engine, flags in _ENGINE_TEMPLATES.items():
        if shutil.which(engine):
            return [engine, *flags]
    return None


def detect_raster_command() -> Optional[list[str]]:
    if shutil.which("pdftoppm"):
        # pdftoppm appends .png itself, so hand it the prefix
        return ["pdftoppm", "-png", "-singlefile", "-r", "{dpi}", "{pdf}", "{png_prefix}"]
    if shutil.which("pdftocairo"):
        return ["pdftocairo", "-png", "-singlefile", "-r", "{dpi}", "{pdf}", "{png_prefix}"]
    if shutil.which("gs"):
        return [
            "gs", "-dBATCH", "-dNOPAUSE", "-sDEVICE=png16m",
            "-r{dpi}", "-dFirstPage=1", "-dLastPage=1",
            "-sOutputFile={png}", "{pdf}",
        ]
    return None


def _fill_template(template: Sequence[str], mapping: dict[str, str]) -> list[str]:
    argv = []
    for part in template:
        for key, value in mapping.items():
            part = part.replace("{" + key + "}", value)
        argv.append(part)
    return argv


def _truncate_log(text: str, limit: int) -> str:
    data = text.encode("utf-8", errors="replace")
    if len(data) <= limit:
        return text
    tail = data[-limit:].decode("utf-8", errors="replace")
    omitted = len(data) - limit
    return f"[log truncated: first {omitted} bytes omitted]\n{tail}"


def render_is_blank(png_path: str | Path, epsilon: int = 8) -> bool:
    """True when every pixel sits within epsilon of the background color."""
    import numpy as np
    from PIL import Image

    with Image.open(png_path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.int16)
    if arr.size == 0:
        return True
    corners = [arr[0, 0], arr[0, -1], arr[-1, 0], arr[-1, -1]]
    background = int(np.median(corners))
    return bool(np.abs(arr - background).max() <= epsilon)


def _decodes(png_path: Path) -> bool:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(png_path) as img:
            img.load()
        return True
    except (UnidentifiedImageError, OSError):
        return False


def compile(
    program: NormalizedProgram,
    cfg: SandboxConfig,
    artifact_dir: Optional[str | Path] = None,
) -> CompileResult:
    """Compile one program in an isolated scratch directory."""
    compiler = cfg.compiler_command or detect_compiler_command()
    if not compiler:
        raise CompilerNotFoundError(
            f"no TeX engine found; set {TEX_ENV_VAR} or SandboxConfig.compiler_command"
        )
    raster = cfg.raster_command or detect_raster_command()
    started = time.monotonic()

    try:
        workdir = Path(tempfile.mkdtemp(prefix="tikzmill-job-"))
    except OSError as exc:
        raise SandboxError(f"could not create sandbox directory: {exc}") from exc
    try:
        tex_path = workdir / "main.tex"
        tex_path.write_text(program.code, encoding="utf-8")
        argv = _fill_template(compiler, {"input": tex_path.name})
        try:
            proc = subprocess.run(
                argv,
                cwd=workdir,
                stdin=subprocess.DEVNULL,
                capture_output=True,
                timeout=cfg.timeout_s,
            )
        except FileNotFoundError as exc:
            raise CompilerNotFoundError(f"compiler binary not found: {argv[0]}") from exc
        except subprocess.TimeoutExpired:
            return _result(program, STATUS_TIMEOUT, "", started)

        log_path = workdir / "main.log"
        log_text = ""
        if log_path.exists():
            log_text = log_path.read_text(encoding="utf-8", errors="replace")
        if not log_text:
            log_text = proc.stdout.decode("utf-8", errors="replace") + proc.stderr.decode(
                "utf-8", errors="replace"
            )
        log_text = _truncate_log(log_text, cfg.max_log_bytes)

        pdf_path = workdir / "main.pdf"
        if proc.returncode != 0 or not pdf_path.exists():
            return _result(program, STATUS_COMPILE_ERROR, log_text or "compiler produced no log", started)

        if not raster:
            raise RasterizerNotFoundError(
                "no PDF rasterizer found; set SandboxConfig.raster_command"
            )
        png_path = workdir / "render.png"
        raster_argv = _fill_template(
            raster,
            {
                "pdf": str(pdf_path),
                "png": str(png_path),
                "png_prefix": str(png_path.with_suffix("")),
                "dpi": str(cfg.render_dpi),
            },
        )
        try:
            raster_proc = subprocess.run(
                raster_argv, capture_output=True, timeout=cfg.timeout_s + cfg.grace_s
            )
        except FileNotFoundError as exc:
            raise RasterizerNotFoundError(f"rasterizer binary not found: {raster_argv[0]}") from exc
        except subprocess.TimeoutExpired:
            return _result(program, STATUS_TIMEOUT, log_text, started)
        if raster_proc.returncode != 0 or not png_path.exists():
            stderr = raster_proc.stderr.decode("utf-8", errors="replace")
            return _result(program, STATUS_CORRUPTED, log_text + "\n" + stderr, started)

        if not _decodes(png_path):
            return _result(program, STATUS_CORRUPTED, log_text, started)
        if render_is_blank(png_path, cfg.blank_epsilon):
            return _result(program, STATUS_EMPTY, log_text, started)

        if artifact_dir is not None:
            dest_dir = Path(artifact_dir)
            dest_dir.mkdir(parents=True, exist_ok=True)
            dest = dest_dir / f"{program.content_hash}.png"
        else:
            fd, name = tempfile.mkstemp(prefix="tikzmill-render-", suffix=".png")
            os.close(fd)
            dest = Path(name)
        shutil.copyfile(png_path, dest)
        return _result(program, STATUS_OK, log_text, started, str(dest))
    except OSError as exc:
        raise SandboxError(f"sandbox filesystem failure: {exc}") from exc
    finally:
        shutil.rmtree(workdir, ignore_errors=True)


def _result(
    program: NormalizedProgram,
    status: str,
    log_text: str,
    started: float,
    artifact: Optional[str] = None,
) -> CompileResult:
    return CompileResult(
        record_id=program.record_id,
        status=status,
        log_text=log_text,
        duration_ms=int((time.monotonic() - started) * 1000),
        artifact_path=artifact,
    )


class CompileCache:
    """Content-addressed result + artifact store with two-level hex fan-out."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.hits = 0
        self.misses = 0

    def _slot(self, content_hash: str) -> Path:
        return self.root / content_hash[:2] / content_hash[2:4]

    def result_path(self, content_hash: str) -> Path:
        return self._slot(content_hash) / f"{content_hash}.json"

    def artifact_path(self, content_hash: str) -> Path:
        return self._slot(content_hash) / f"{content_hash}.png"

    def get(self, content_hash: str) -> Optional[CompileResult]:
        path = self.result_path(content_hash)
        if not path.exists():
            self.misses += 1
            return None
        self.hits += 1
        return CompileResult.from_dict(json.loads(path.read_text()))

    def put(self, content_hash: str, result: CompileResult) -> CompileResult:
        slot = self._slot(content_hash)
        slot.mkdir(parents=True, exist_ok=True)
        stored = result
        if result.artifact_path:
            artifact_dest = self.artifact_path(content_hash)
            if Path(result.artifact_path) != artifact_dest:
                _atomic_copy(Path(result.artifact_path), artifact_dest)
            stored = CompileResult(
                record_id=result.record_id,
                status=result.status,
                log_text=result.log_text,
                duration_ms=result.duration_ms,
                artifact_path=str(artifact_dest),
            )
        tmp = self.result_path(content_hash).with_suffix(".json.tmp")
        tmp.write_text(json.dumps(stored.to_dict(), sort_keys=True))
        os.replace(tmp, self.result_path(content_hash))
        return stored


def _atomic_copy(src: Path, dest: Path) -> None:
    tmp = dest.with_suffix(dest.suffix + ".tmp")
    shutil.copyfile(src, tmp)
    os.replace(tmp, dest)


def compile_cached(
    program: NormalizedProgram, cfg: SandboxConfig, cache: CompileCache
) -> CompileResult:
    """Serve from the cache when possible; record fresh results into it.

    Cached results are replayed with the caller's record_id so multiple
    records sharing code stay distinguishable.
    """
    cached = cache.get(program.content_hash)
    if cached is not None:
        if cached.record_id != program.record_id:
            cached = CompileResult(
                record_id=program.record_id,
                status=cached.status,
                log_text=cached.log_text,
                duration_ms=cached.duration_ms,
                artifact_path=cached.artifact_path,
            )
        return cached
    result = compile(program, cfg)
    return cache.put(program.content_hash, result)


def compile_many(
    programs: Sequence[NormalizedProgram],
    cfg: SandboxConfig,
    jobs: int = 1,
    cache: Optional[CompileCache] = None,
) -> list[CompileResult]:
    """Bounded worker pool over compile jobs; order of results matches input."""
    runner = (
        (lambda p: compile_cached(p, cfg, cache)) if cache else (lambda p: compile(p, cfg))
    )
    if jobs <= 1:
        return [runner(p) for p in programs]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(runner, programs))


def compilation_rate(results: Sequence[CompileResult]) -> float:
    """Fraction of results with status ok."""
    if not results:
        raise ValueError("compilation_rate requires at least one result")
    return sum(1 for r in results if r.status == STATUS_OK) / len(results)


def write_results_jsonl(results: Iterable[CompileResult], path: str | Path) -> int:
    count = 0
    with open(path, "w") as fh:
        for r in results:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
            count += 1
    return count


def read_results_jsonl(path: str | Path) -> list[CompileResult]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(CompileResult.from_dict(json.loads(line)))
    return out
