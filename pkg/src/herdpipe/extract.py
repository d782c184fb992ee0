"""Running the external extractor (ffmpeg or any wrapper) from a command template.

Templates are split shell-style first and each token is then filled with
``str.format``, so substituted paths never need quoting.  Placeholders
available for clips:

``{input}`` ``{output}`` ``{plan}`` ``{first_frame}`` ``{last_frame}``
``{n_frames}`` ``{start_s}`` ``{duration_s}`` ``{crop}`` ``{out_size}``
``{clip_id}``

For overlays ``{frame}`` and ``{filter}`` replace the clip-specific ones.
"""

from __future__ import annotations

import json
import shlex
import subprocess
from pathlib import Path

from .clipgeom import ClipSpec, crop_filter
from .timesync import as_frame_rate

DEFAULT_EXTRACTOR = (
    "ffmpeg -y -loglevel error -ss {start_s} -i {input} -frames:v {n_frames} "
    "-vf {crop} -an {output}"
)
DEFAULT_OVERLAY = "ffmpeg -y -loglevel error -i {input} -vf {filter} -frames:v 1 {output}"


class ExternalCommandError(RuntimeError):
    pass


def render_command(template, fields: dict) -> list[str]:
    tokens = shlex.split(template) if isinstance(template, str) else list(template)
    try:
        return [tok.format(**fields) for tok in tokens]
    except KeyError as exc:
        raise ExternalCommandError(f"unknown placeholder {exc} in command template") from None


def run_command(argv: list[str], timeout: float | None = None, retries: int = 0,
                stdin: str | None = None) -> subprocess.CompletedProcess:
    """Run ``argv``, retrying on a non-zero exit or timeout; raise after the last attempt."""
    last = ""
    for _ in range(retries + 1):
        try:
            proc = subprocess.run(argv, input=stdin, capture_output=True, text=True, timeout=timeout)
        except subprocess.TimeoutExpired:
            last = f"timed out after {timeout}s"
            continue
        except OSError as exc:
            raise ExternalCommandError(f"cannot run {argv[0]!r}: {exc}") from None
        if proc.returncode == 0:
            return proc
        last = f"exit code {proc.returncode}: {proc.stderr.strip()[-500:]}"
    raise ExternalCommandError(f"{shlex.join(argv)} failed ({last})")


def clip_fields(clip: ClipSpec, frame_rate, output, input_path=None, plan_path=None) -> dict:
    fps = as_frame_rate(frame_rate)
    return {
        "input": str(input_path if input_path is not None else clip.video_ref),
        "output": str(output),
        "plan": str(plan_path or ""),
        "clip_id": clip.clip_id,
        "first_frame": clip.first_frame,
        "last_frame": clip.last_frame,
        "n_frames": len(clip.frames),
        "start_s": f"{float(clip.first_frame / fps):.6f}",
        "duration_s": f"{float(len(clip.frames) / fps):.6f}",
        "crop": crop_filter(clip.center_crop),
        "out_size": clip.crops[0].out_size,
    }


def extract_clip(clip: ClipSpec, output, template=DEFAULT_EXTRACTOR, frame_rate=30,
                 video_root=None, timeout: float | None = None, retries: int = 0) -> Path:
    """Extract one clip via the external command and check that it produced ``output``.

    A sidecar ``<output>.plan.json`` holding the per-frame crop boxes is
    written first and passed as ``{plan}``.
    """
    output = Path(output)
    output.parent.mkdir(parents=True, exist_ok=True)
    plan_path = output.with_name(output.name + ".plan.json")
    plan_path.write_text(json.dumps(clip.to_record()), encoding="utf-8")
    src = Path(video_root) / clip.video_ref if video_root else clip.video_ref
    argv = render_command(template, clip_fields(clip, frame_rate, output, src, plan_path))
    if output.exists():
        output.unlink()
    run_command(argv, timeout=timeout, retries=retries)
    if not output.exists():
        raise ExternalCommandError(f"extractor exited cleanly but wrote no {output}")
    return output


def overlay_filter(items, font_size: int = 24) -> str:
    """ffmpeg drawbox/drawtext chain for ``(BBox, text)`` pairs."""
    parts = []
    for box, text in items:
        x, y, w, h = (round(v) for v in box.as_list())
        safe = text.replace("\\", "\\\\").replace(":", "\\:").replace("'", "\\'")
        parts.append(f"drawbox=x={x}:y={y}:w={w}:h={h}:color=yellow:t=3")
        parts.append(
            f"drawtext=text='{safe}':x={x}:y={max(0, y - font_size - 4)}:"
            f"fontsize={font_size}:fontcolor=yellow:box=1:boxcolor=black@0.5"
        )
    return ",".join(parts) if parts else "null"
