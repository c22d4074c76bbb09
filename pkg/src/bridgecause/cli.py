"""Command-line front end: ``bridgecause shoot | neighbors | diagnose | genqa | fixture``.

Settings come from flags, then an optional YAML ``--config`` file, then
defaults. Exit codes: 0 ok, 2 configuration, 3 input parsing, 4 oracle,
5 image of interest does not hit the mesh.
"""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import click
import yaml

from . import diagnosis as dx
from .neighborhood import InterestMissedError, UnknownInterestError, select_surrounding, shooting_document, shooting_points
from .remote import RemoteOracle
from .scene import SceneParseError, load_scene
from .vqa import AnnotationOracle, OracleError, Vocabulary, corpus_jsonl, load_vocabulary, parse_annotations, qa_records

EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_ORACLE = 4
EXIT_SCENE = 5

logger = logging.getLogger("bridgecause")


@dataclass
class RunConfig:
    mesh: str | None = None
    poses: str | None = None
    annotations: str | None = None
    oracle_endpoint: str | None = None
    rules: str | None = None
    vocabulary: str | None = None
    interest: str | None = None
    radius: float = 1.0
    output: str | None = None
    table: str | None = None
    concurrency: int = 1
    timeout: float = 30.0
    exhaustive_events: bool = False
    negatives: int = 2
    workers: int = 1
    timestamp: bool = True

    def echo(self) -> dict:
        """Settings that can change results; execution-only knobs are left out."""
        keep = ("mesh", "poses", "annotations", "oracle_endpoint", "rules", "vocabulary", "interest", "radius", "exhaustive_events")
        return {k: v for k, v in asdict(self).items() if k in keep and v is not None}


class CliFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def resolve_config(config_path: str | None, **flags) -> RunConfig:
    names = {f.name for f in fields(RunConfig)}
    merged: dict = {}
    if config_path:
        try:
            doc = yaml.safe_load(Path(config_path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise CliFailure(EXIT_CONFIG, f"cannot read config {config_path}: {exc}") from None
        if not isinstance(doc, dict):
            raise CliFailure(EXIT_CONFIG, f"config {config_path} must be a mapping")
        unknown = set(doc) - names
        if unknown:
            raise CliFailure(EXIT_CONFIG, f"unknown config key(s): {sorted(unknown)}")
        merged.update(doc)
    merged.update({k: v for k, v in flags.items() if v is not None})
    cfg = RunConfig(**merged)
    if cfg.radius < 0:
        raise CliFailure(EXIT_CONFIG, f"radius must be >= 0, got {cfg.radius}")
    if cfg.concurrency < 1:
        raise CliFailure(EXIT_CONFIG, "concurrency must be >= 1")
    return cfg


def _need(cfg: RunConfig, *keys: str) -> None:
    missing = [k for k in keys if getattr(cfg, k) in (None, "")]
    if missing:
        raise CliFailure(EXIT_CONFIG, "missing required setting(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _scene(cfg: RunConfig):
    _need(cfg, "mesh", "poses")
    try:
        return load_scene(cfg.mesh, cfg.poses)
    except OSError as exc:
        raise CliFailure(EXIT_CONFIG, str(exc)) from None
    except (SceneParseError, ValueError) as exc:
        raise CliFailure(EXIT_PARSE, f"parse error: {exc}") from None


def _vocab(cfg: RunConfig) -> Vocabulary:
    if not cfg.vocabulary:
        return Vocabulary()
    try:
        return load_vocabulary(cfg.vocabulary)
    except OSError as exc:
        raise CliFailure(EXIT_CONFIG, str(exc)) from None
    except (ValueError, yaml.YAMLError) as exc:
        raise CliFailure(EXIT_PARSE, f"vocabulary: {exc}") from None


def _annotations(cfg: RunConfig):
    try:
        return parse_annotations(Path(cfg.annotations).read_bytes())
    except OSError as exc:
        raise CliFailure(EXIT_CONFIG, str(exc)) from None
    except (ValueError, KeyError, TypeError) as exc:
        raise CliFailure(EXIT_PARSE, f"annotations: {exc}") from None


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        click.echo(text, nl=False)


def _dumps(doc) -> str:
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def _run(fn):
    try:
        fn()
    except CliFailure as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.code)


# ---------------------------------------------------------------------------
# commands


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Estimate bridge damage causes from SfM poses, a mesh, and a VQA oracle."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


_common = [
    click.option("--config", "config_path", type=click.Path(), help="YAML file with default settings."),
    click.option("--mesh", help="Triangle mesh, Wavefront OBJ."),
    click.option("--poses", help="Camera pose document (JSON)."),
    click.option("--output", "-o", help="Write the result here instead of stdout."),
]


def common(fn):
    for opt in reversed(_common):
        fn = opt(fn)
    return fn


@main.command()
@common
@click.option("--workers", type=int, help="Threads for ray casting.")
def shoot(config_path, mesh, poses, output, workers):
    """Per-image shooting points (nearest mesh hit along the optical axis)."""

    def go():
        cfg = resolve_config(config_path, mesh=mesh, poses=poses, output=output, workers=workers)
        scene = _scene(cfg)
        pts = shooting_points(scene, workers=cfg.workers)
        _emit(_dumps(shooting_document(pts)), cfg.output)

    _run(go)


@main.command()
@common
@click.option("--interest", help="image_id of the image of interest.")
@click.option("--radius", type=float, help="Ball radius in meters (default 1.0).")
@click.option("--workers", type=int, help="Threads for ray casting.")
def neighbors(config_path, mesh, poses, output, interest, radius, workers):
    """Classify images as interest / surrounding / excluded / missed."""

    def go():
        cfg = resolve_config(config_path, mesh=mesh, poses=poses, output=output, interest=interest, radius=radius, workers=workers)
        _need(cfg, "interest")
        scene = _scene(cfg)
        try:
            sel = select_surrounding(shooting_points(scene, workers=cfg.workers), cfg.interest, cfg.radius)
        except UnknownInterestError as exc:
            raise CliFailure(EXIT_CONFIG, str(exc)) from None
        except InterestMissedError as exc:
            raise CliFailure(EXIT_SCENE, str(exc)) from None
        _emit(_dumps(sel.to_dict()), cfg.output)

    _run(go)


@main.command()
@common
@click.option("--interest", help="image_id of the image of interest.")
@click.option("--radius", type=float, help="Ball radius in meters (default 1.0).")
@click.option("--annotations", help="Annotation document backing the oracle.")
@click.option("--oracle-endpoint", help="URL of a remote VQA oracle.")
@click.option("--rules", help="Cause-rule file (YAML/JSON); default: the four corrosion causes.")
@click.option("--vocabulary", help="Vocabulary file (YAML).")
@click.option("--table", help="Also write the human-readable table here.")
@click.option("--concurrency", type=int, help="Images evaluated in parallel (default 1).")
@click.option("--timeout", type=float, help="Per-question timeout for the remote oracle, seconds.")
@click.option("--exhaustive-events/--short-circuit", "exhaustive_events", default=None, help="Ask every event question even after a yes.")
@click.option("--timestamp/--no-timestamp", default=None, help="Include generated_at in the report.")
def diagnose(config_path, mesh, poses, output, interest, radius, annotations, oracle_endpoint, rules, vocabulary, table, concurrency, timeout, exhaustive_events, timestamp):
    """Run the two-step cause estimation and write the report."""

    def go():
        cfg = resolve_config(
            config_path, mesh=mesh, poses=poses, output=output, interest=interest, radius=radius,
            annotations=annotations, oracle_endpoint=oracle_endpoint, rules=rules, vocabulary=vocabulary,
            table=table, concurrency=concurrency, timeout=timeout, exhaustive_events=exhaustive_events,
            timestamp=timestamp,
        )
        _need(cfg, "interest")
        if bool(cfg.annotations) == bool(cfg.oracle_endpoint):
            raise CliFailure(EXIT_CONFIG, "configure exactly one of --annotations or --oracle-endpoint")
        vocab = _vocab(cfg)
        try:
            rule_set = dx.load_rules(cfg.rules) if cfg.rules else list(dx.DEFAULT_RULES)
            for r in rule_set:
                r.validate(vocab)
        except OSError as exc:
            raise CliFailure(EXIT_CONFIG, str(exc)) from None
        except (ValueError, yaml.YAMLError) as exc:
            raise CliFailure(EXIT_PARSE, f"rules: {exc}") from None
        if cfg.annotations:
            try:
                oracle = AnnotationOracle(_annotations(cfg), vocab)
            except ValueError as exc:
                raise CliFailure(EXIT_PARSE, f"annotations: {exc}") from None
        else:
            oracle = RemoteOracle(cfg.oracle_endpoint, vocab, timeout=cfg.timeout, max_in_flight=max(8, cfg.concurrency))
        scene = _scene(cfg)
        try:
            sel = select_surrounding(shooting_points(scene), cfg.interest, cfg.radius)
        except UnknownInterestError as exc:
            raise CliFailure(EXIT_CONFIG, str(exc)) from None
        except InterestMissedError as exc:
            raise CliFailure(EXIT_SCENE, str(exc)) from None
        try:
            report = dx.diagnose(
                scene, cfg.interest, rule_set, oracle, cfg.radius,
                exhaustive=cfg.exhaustive_events, max_workers=cfg.concurrency,
                timestamp=cfg.timestamp, selection=sel,
            )
        except (dx.DiagnosisError, OracleError) as exc:
            raise CliFailure(EXIT_ORACLE, f"oracle failure: {exc}") from None
        report.config.update(cfg.echo())
        _emit(_dumps(report.to_dict()), cfg.output)
        rendered = report.render_table()
        if cfg.table:
            Path(cfg.table).write_text(rendered)
        if cfg.output:
            click.echo(rendered, nl=False)

    _run(go)


@main.command()
@click.option("--config", "config_path", type=click.Path(), help="YAML file with default settings.")
@click.option("--annotations", help="Annotation document.")
@click.option("--vocabulary", help="Vocabulary file (YAML).")
@click.option("--negatives", type=int, help="Absent members and absent damages asked per image (default 2).")
@click.option("--output", "-o", help="Write the JSONL corpus here instead of stdout.")
def genqa(config_path, annotations, vocabulary, negatives, output):
    """Generate the question/answer corpus (JSON lines) from annotations."""

    def go():
        cfg = resolve_config(config_path, annotations=annotations, vocabulary=vocabulary, negatives=negatives, output=output)
        _need(cfg, "annotations")
        vocab = _vocab(cfg)
        try:
            records = qa_records(_annotations(cfg), vocab, cfg.negatives)
        except ValueError as exc:
            raise CliFailure(EXIT_PARSE, f"annotations: {exc}") from None
        _emit(corpus_jsonl(records), cfg.output)

    _run(go)


@main.command()
@click.option("--out-dir", required=True, type=click.Path(file_okay=False), help="Directory to write into.")
@click.option("--seed", default=2024, show_default=True, type=int)
def fixture(out_dir, seed):
    """Write the scripted 64-image field-test fixture plus the default rule file."""
    from .harness import field_test_fixture

    gen = field_test_fixture(seed)
    paths = gen.write(out_dir)
    rules_path = Path(out_dir) / "rules.yaml"
    rules_path.write_text(dx.dump_rules(dx.DEFAULT_RULES))
    click.echo(f"wrote {', '.join(str(p) for p in paths.values())}, {rules_path}")
    click.echo(f"image of interest: {gen.interest_id}")


if __name__ == "__main__":
    main()
