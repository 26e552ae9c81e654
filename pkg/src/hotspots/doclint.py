"""Documentation lint: method-map coverage and config-reference completeness."""

from __future__ import annotations

import dataclasses
import importlib
import re
from dataclasses import dataclass
from pathlib import Path

from hotspots.training import TrainConfig

# Canonical map from core components to the code that implements them. The
# shipped docs/method_map.md must list every entry exactly once with the
# matching target; `hotspots report` enforces this.
REQUIRED_COMPONENTS = {
    "frame feature encoding": "hotspots.encoder:FrameEncoder",
    "dilated high-resolution backbone": "hotspots.encoder:SmallDilatedEncoder",
    "l2 spatial pooling": "hotspots.encoder:l2_pool",
    "clip aggregation": "hotspots.temporal:ClipAggregator",
    "chunked sequence processing": "hotspots.temporal:ClipAggregator.forward",
    "action classification": "hotspots.temporal:ActionClassifier",
    "classification loss": "hotspots.temporal:classification_loss",
    "active-frame selection": "hotspots.temporal:select_active_frame",
    "anticipation transform": "hotspots.anticipation:AnticipationNet",
    "feature matching loss": "hotspots.anticipation:feature_match_loss",
    "triplet matching loss": "hotspots.anticipation:triplet_match_loss",
    "auxiliary single-step loss": "hotspots.model:AffordanceModel.aux_loss",
    "inactive action scoring": "hotspots.model:AffordanceModel.inactive_scores",
    "combined training objective": "hotspots.training:total_loss",
    "training presets": "hotspots.training:TrainConfig",
    "gradient-weighted hotspot mapping": "hotspots.hotspot:hotspot_map",
    "through-anticipation gradient path": "hotspots.hotspot:hotspot_map",
    "per-frame video hotspots": "hotspots.hotspot:video_hotspots",
    "keypoint ground-truth heatmaps": "hotspots.data:keypoints_to_heatmap",
    "ground-truth heatmap union": "hotspots.data:union_gt_heatmaps",
    "novel-object split protocol": "hotspots.data:make_novel_split",
    "kld metric": "hotspots.metrics:kld",
    "sim metric": "hotspots.metrics:sim",
    "auc-j metric": "hotspots.metrics:auc_j",
    "center-bias baseline": "hotspots.metrics:center_bias",
    "recognition grad-cam baseline": "hotspots.evaluation:gradcam_map",
    "supervised image-to-heatmap baseline": "hotspots.evaluation:Img2Heatmap",
    "evaluation protocol": "hotspots.evaluation:evaluate",
    "functional-similarity embeddings": "hotspots.evaluation:build_embedding_table",
    "object embedding clustering": "hotspots.evaluation:cluster_objects",
    "synthetic benchmark generator": "hotspots.synth:synth_generate",
}

_ROW = re.compile(r"^\|\s*(?P<anchor>[^|`]+?)\s*\|\s*`(?P<target>[\w.:]+)`\s*\|")
_CONFIG_KEY = re.compile(r"^\|\s*`(?P<key>\w+)`")


@dataclass
class LintReport:
    passed: bool
    problems: list[str]

    def lines(self) -> list[str]:
        if self.passed:
            return ["doc lint: PASS"]
        return ["doc lint: FAIL"] + [f"  - {p}" for p in self.problems]


def resolve_target(target: str):
    """Import 'module:attr[.attr]' and return the named object."""
    module_name, _, attr_path = target.partition(":")
    obj = importlib.import_module(module_name)
    for part in attr_path.split("."):
        obj = getattr(obj, part)
    return obj


def _lint_method_map(path: Path, problems: list[str]):
    if not path.is_file():
        problems.append(f"missing {path.name}")
        return
    seen: dict[str, str] = {}
    for line in path.read_text().splitlines():
        match = _ROW.match(line)
        if not match:
            continue
        anchor = match.group("anchor").strip().lower()
        if anchor in ("component", "---"):
            continue
        if anchor in seen:
            problems.append(f"method map lists {anchor!r} more than once")
        seen[anchor] = match.group("target")
    for anchor, target in REQUIRED_COMPONENTS.items():
        if anchor not in seen:
            problems.append(f"method map is missing component {anchor!r}")
        elif seen[anchor] != target:
            problems.append(
                f"method map points {anchor!r} at {seen[anchor]!r}; expected {target!r}"
            )
    for anchor, target in seen.items():
        try:
            resolve_target(target)
        except (ImportError, AttributeError) as exc:
            problems.append(f"method map target {target!r} does not resolve: {exc}")


def _lint_config_reference(path: Path, problems: list[str]):
    if not path.is_file():
        problems.append(f"missing {path.name}")
        return
    documented = []
    in_train_table = False
    for line in path.read_text().splitlines():
        if line.startswith("##"):
            in_train_table = "train" in line.lower()
            continue
        if in_train_table:
            match = _CONFIG_KEY.match(line)
            if match and match.group("key") not in documented:
                documented.append(match.group("key"))
    expected = [f.name for f in dataclasses.fields(TrainConfig)]
    missing = sorted(set(expected) - set(documented))
    extra = sorted(set(documented) - set(expected) - {"dataset", "unfamiliar_objects"})
    if missing:
        problems.append(f"config reference is missing keys {missing}")
    if extra:
        problems.append(f"config reference documents unknown keys {extra}")


def doc_lint(docs_dir: Path | str) -> LintReport:
    """Check the docs tree; report-only, never raises on lint findings."""
    docs_dir = Path(docs_dir)
    problems: list[str] = []
    if not docs_dir.is_dir():
        return LintReport(passed=False, problems=[f"docs directory not found: {docs_dir}"])
    _lint_method_map(docs_dir / "method_map.md", problems)
    _lint_config_reference(docs_dir / "configuration.md", problems)
    return LintReport(passed=not problems, problems=problems)


def render_method_map() -> str:
    """Canonical method-map table (what the shipped doc should contain)."""
    lines = [
        "| component | implementation |",
        "| --- | --- |",
    ]
    for anchor, target in REQUIRED_COMPONENTS.items():
        lines.append(f"| {anchor} | `{target}` |")
    return "\n".join(lines) + "\n"
