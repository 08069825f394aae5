"""Command-line pipeline driver.

One JSON configuration document drives every stage; each subcommand
reads its upstream artifacts from the working directory (or explicit
flags), derives its own named substream of the root seed, and writes
versioned artifacts stamped with (tool version, config hash, seed).
Re-running any command with identical inputs reproduces byte-identical
files.

Subcommands: generate, calibrate, train, infer, validate, thresholds,
sensitivity, profile-svg.  The working directory defaults to
``./artifacts`` and may be overridden by ``--workdir`` or the
``OCUFLOW_WORKDIR`` environment variable (the only environment variable
the tool reads).  Pressures on the command line are in mmHg.
"""

from __future__ import annotations

import argparse
import csv
import json
import pathlib
import sys

from . import __version__
from .artifacts import make_provenance, read_csv, read_json, write_csv, write_json
from .config import PipelineConfig
from .core import PatientInput, from_clinical, substream, to_clinical
from .datasets import (STAGE1_COLUMNS, STAGE1_FEATURES, STAGE2_COLUMNS,
                       STAGE2_FEATURES, CalibrationFit, fit_bias,
                       generate_stage1, generate_stage2, stage1_matrix,
                       stage2_matrix)
from .gbt import FitReport, TreeEnsemble
from .inference import (PARAMETERS, PosteriorProfile, ReferencePopulation,
                        profile_patient, sensitivity_scan)
from .pipeline import (TrainedPipeline, _fit_stage, archetype_threshold_study,
                       reference_from_stage2, validate_against_measured)
from .radar import render_radar_svg

__all__ = ["main"]

_PRODUCERS = {
    "config.json": "any ocuflow command (it is written alongside artifacts)",
    "stage1_data.csv": "ocuflow generate --stage 1",
    "stage2_data.csv": "ocuflow generate --stage 2",
    "calibration.json": "ocuflow calibrate",
    "stage1_model.json": "ocuflow train --stage 1",
    "stage2_model.json": "ocuflow train --stage 2",
    "reference.json": "ocuflow train --stage 2",
}


class CliError(Exception):
    """User-correctable failure with a structured message."""


def _workdir(args) -> pathlib.Path:
    import os

    raw = args.workdir or os.environ.get("OCUFLOW_WORKDIR") or "artifacts"
    path = pathlib.Path(raw)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config(args) -> PipelineConfig:
    if args.config:
        path = pathlib.Path(args.config)
        if not path.exists():
            raise CliError(f"config file {path} does not exist")
        config = PipelineConfig.from_json_file(path)
    else:
        config = PipelineConfig()
    if getattr(args, "seed", None) is not None:
        config = PipelineConfig.from_dict(
            {**config.to_dict(), "seed": args.seed})
    return config


def _resolve(args, workdir: pathlib.Path, flag: str, default_name: str,
             must_exist: bool) -> pathlib.Path:
    explicit = getattr(args, flag, None)
    path = pathlib.Path(explicit) if explicit else workdir / default_name
    if must_exist and not path.exists():
        producer = _PRODUCERS.get(default_name)
        hint = f"; run `{producer}` first" if producer else ""
        raise CliError(f"required artifact {path} not found{hint}")
    return path


def _write_config_copy(config: PipelineConfig, workdir: pathlib.Path) -> None:
    (workdir / "config.json").write_text(config.to_json() + "\n",
                                         encoding="utf-8")


def _load_models(args, workdir, config) -> tuple:
    stage1 = TreeEnsemble.from_dict(read_json(
        _resolve(args, workdir, "stage1_model", "stage1_model.json", True),
        "model")["ensemble"])
    stage2 = TreeEnsemble.from_dict(read_json(
        _resolve(args, workdir, "stage2_model", "stage2_model.json", True),
        "model")["ensemble"])
    return stage1, stage2


def _report_text(lines) -> str:
    return "\n".join(lines) + "\n"


def _emit_report(out_json: pathlib.Path, kind: str, payload: dict,
                 provenance: dict, text: str) -> None:
    write_json(out_json, kind, payload, provenance)
    out_text = out_json.with_suffix(".txt")
    out_text.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    sys.stdout.write(f"wrote {out_json} and {out_text}\n")


def _cmd_generate(args) -> int:
    config = _load_config(args)
    workdir = _workdir(args)
    _write_config_copy(config, workdir)
    seed = config.seed
    if args.stage == 1:
        n = args.n or config.n_stage1
        frame = generate_stage1(
            n, config.priors, config.ktm_range, config.geometry_m,
            config.mu_pa_s, config.stage1_noise_mmhg,
            substream(seed, "stage1-data"), bias_line=config.bias_line)
        columns, default_name, stage_name = STAGE1_COLUMNS, "stage1_data.csv", "stage1-data"
    else:
        n = args.n or config.n_stage2
        stage1_model, _ = _load_models_stage1_only(args, workdir)
        calibration = CalibrationFit.from_dict(read_json(
            _resolve(args, workdir, "calibration", "calibration.json", True),
            "calibration")["fit"])
        frame = generate_stage2(
            n, stage1_model, calibration, config.archetypes, config.priors,
            config.mu_pa_s, config.stage2_noise_mmhg, config.age_range,
            substream(seed, "stage2-data"))
        columns, default_name, stage_name = STAGE2_COLUMNS, "stage2_data.csv", "stage2-data"
    out = _resolve(args, workdir, "out", default_name, must_exist=False)
    provenance = make_provenance(config.config_hash(), seed,
                                 stage=stage_name, n=n)
    write_csv(out, columns, frame.itertuples(index=False, name=None), provenance)
    sys.stdout.write(f"wrote {len(frame)} rows to {out}\n")
    return 0


def _load_models_stage1_only(args, workdir) -> tuple:
    path = _resolve(args, workdir, "stage1_model", "stage1_model.json", True)
    doc = read_json(path, "model")
    return TreeEnsemble.from_dict(doc["ensemble"]), doc


def _cmd_calibrate(args) -> int:
    config = _load_config(args)
    workdir = _workdir(args)
    _write_config_copy(config, workdir)
    fit = fit_bias(config.n_calibration, config.priors,
                   config.calibration_noise_mmhg,
                   config.calibration_iop_bands_mmhg,
                   substream(config.seed, "calibration"),
                   bias_line=config.bias_line)
    out = _resolve(args, workdir, "out", "calibration.json", must_exist=False)
    write_json(out, "calibration", {"fit": fit.to_dict()},
               make_provenance(config.config_hash(), config.seed,
                               stage="calibration"))
    sys.stdout.write(
        f"calibration: intercept {fit.ols.intercept_mmhg:+.4f} mmHg, "
        f"slope {fit.ols.slope:+.5f} (n={fit.n}, adj R2 {fit.r2_adj:.4f}, "
        f"slope p {fit.p_value_slope:.3e})\nwrote {out}\n")
    return 0


def _cmd_train(args) -> int:
    config = _load_config(args)
    workdir = _workdir(args)
    _write_config_copy(config, workdir)
    if args.stage == 1:
        data = _resolve(args, workdir, "data", "stage1_data.csv", True)
        frame, _ = read_csv(data)
        X, y = stage1_matrix(frame)
        hp, names, stage_name = config.stage1_hp, STAGE1_FEATURES, "stage1"
        default_out = "stage1_model.json"
    else:
        data = _resolve(args, workdir, "data", "stage2_data.csv", True)
        frame, _ = read_csv(data)
        X, y = stage2_matrix(frame)
        hp, names, stage_name = config.stage2_hp, STAGE2_FEATURES, "stage2"
        default_out = "stage2_model.json"
    model, report = _fit_stage(X, y, hp, config.seed, stage_name, names)
    out = _resolve(args, workdir, "out", default_out, must_exist=False)
    write_json(out, "model",
               {"stage": args.stage, "ensemble": model.to_dict(),
                "fit_report": report.to_dict()},
               make_provenance(config.config_hash(), config.seed,
                               stage=f"{stage_name}-train"))
    sys.stdout.write(
        f"stage {args.stage}: held-out R2 {report.r2:.4f}, "
        f"RMSE {report.rmse:.4f} (train {report.n_train}, test {report.n_test})\n"
        f"wrote {out}\n")
    if args.stage == 2:
        reference = reference_from_stage2(frame, config)
        ref_path = workdir / "reference.json"
        write_json(ref_path, "reference", {"reference": reference.to_dict()},
                   make_provenance(config.config_hash(), config.seed,
                                   stage="reference"))
        sys.stdout.write(f"wrote {ref_path}\n")
    return 0


def _patient_from_args(args) -> PatientInput:
    return PatientInput(age_years=float(args.age),
                        iop=from_clinical(float(args.iop), "pressure"))


def _patient_key(prefix: str, args) -> tuple:
    return (prefix, f"{float(args.age):.6g}", f"{float(args.iop):.6g}")


def _profile_lines(profile: PosteriorProfile) -> list:
    lines = [f"posterior profile over {profile.n_draws} draws "
             f"(age {profile.provenance['age_years']:g} y, IOP "
             f"{to_clinical(profile.provenance['iop_pa'], 'pressure'):.2f} mmHg)",
             f"{'parameter':<12} {'median':>12} {'q05':>12} {'q95':>12}"]
    for parameter in PARAMETERS:
        s = profile.summary[parameter]
        lines.append(f"{parameter:<12} {s['median']:>12.5g} "
                     f"{s['q05']:>12.5g} {s['q95']:>12.5g}")
    c_med = to_clinical(profile.median("c_trab"), "facility")
    lines.append(f"outflow facility median: {c_med:.4f} uL/min/mmHg")
    return lines


def _cmd_infer(args) -> int:
    config = _load_config(args)
    workdir = _workdir(args)
    _write_config_copy(config, workdir)
    stage1, stage2 = _load_models(args, workdir, config)
    patient = _patient_from_args(args)
    rng = substream(config.seed, *_patient_key("infer", args))
    profile = profile_patient(patient, stage1, stage2, config.priors,
                              config, rng)
    tag = args.id or f"age{float(args.age):g}_iop{float(args.iop):g}"
    out = _resolve(args, workdir, "out", f"profile_{tag}.json", must_exist=False)
    payload = profile.to_dict()
    payload["patient_id"] = tag
    write_json(out, "profile",
               {"profile": payload},
               make_provenance(config.config_hash(), config.seed,
                               stage="infer", patient_id=tag))
    sys.stdout.write(_report_text(_profile_lines(profile)))
    sys.stdout.write(f"wrote {out}\n")
    return 0


def _read_profiles(directory: pathlib.Path) -> dict:
    if not directory.is_dir():
        raise CliError(f"profile directory {directory} does not exist; "
                       "run `ocuflow infer` to create profiles")
    profiles = {}
    for path in sorted(directory.glob("*.json")):
        try:
            doc = read_json(path, "profile")
        except (ValueError, KeyError, json.JSONDecodeError):
            continue
        body = doc["profile"]
        patient_id = body.get("patient_id", path.stem)
        profiles[str(patient_id)] = PosteriorProfile.from_dict(body)
    if not profiles:
        raise CliError(f"no profile artifacts found in {directory}; "
                       "run `ocuflow infer` first")
    return profiles


def _read_measured(path: pathlib.Path) -> dict:
    if not path.exists():
        raise CliError(f"measured file {path} does not exist")
    with path.open(encoding="utf-8", newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(lines)
    required = {"id", "c_trab_ul_min_mmhg"}
    if reader.fieldnames is None or not required <= set(reader.fieldnames):
        raise CliError(f"{path}: header must include columns {sorted(required)}")
    measured = {}
    for row_num, row in enumerate(reader, start=1):
        try:
            measured[row["id"].strip()] = float(row["c_trab_ul_min_mmhg"])
        except ValueError:
            raise CliError(f"{path}: row {row_num}, column "
                           "'c_trab_ul_min_mmhg': expected a number") from None
    return measured


def _cmd_validate(args) -> int:
    config = _load_config(args)
    workdir = _workdir(args)
    _write_config_copy(config, workdir)
    profiles = _read_profiles(pathlib.Path(args.profiles))
    measured = _read_measured(pathlib.Path(args.measured))
    matched = sorted(set(profiles) & set(measured))
    if len(matched) < 3:
        raise CliError(
            f"only {len(matched)} ids are present in both profiles and "
            "measured data; need at least 3")
    report = validate_against_measured(
        profiles, measured, substream(config.seed, "validate-bootstrap"),
        n_resamples=args.resamples)
    lines = [
        f"agreement report on {report['n']} matched patients",
        f"{'metric':<22} {'value':>12} {'95% CI':>26}",
        f"{'bias (uL/min/mmHg)':<22} {report['bias']:>+12.5f} "
        f"[{report['bias_ci'][0]:+.5f}, {report['bias_ci'][1]:+.5f}]",
        f"{'LoA lower':<22} {report['loa_lower']:>+12.5f}",
        f"{'LoA upper':<22} {report['loa_upper']:>+12.5f}",
        f"{'Spearman rho':<22} {report['spearman_rho']:>12.5f} "
        f"[{report['spearman_ci'][0]:+.5f}, {report['spearman_ci'][1]:+.5f}]",
        f"{'Spearman p':<22} {report['spearman_p']:>12.3e}",
        f"{'ICC(2,1)':<22} {report['icc_2_1']:>12.5f} "
        f"[{report['icc_ci'][0]:+.5f}, {report['icc_ci'][1]:+.5f}]",
        f"{'Wilcoxon p':<22} {report['wilcoxon_p']:>12.3e} "
        f"({report['wilcoxon_method']})",
    ]
    out = _resolve(args, workdir, "out", "validation_report.json", must_exist=False)
    _emit_report(out, "report", {"report": report},
                 make_provenance(config.config_hash(), config.seed,
                                 stage="validate"),
                 _report_text(lines))
    return 0


def _cmd_thresholds(args) -> int:
    config = _load_config(args)
    workdir = _workdir(args)
    _write_config_copy(config, workdir)
    pipeline = _pipeline_from_workdir(args, workdir, config)
    study = archetype_threshold_study(
        pipeline, substream(config.seed, "thresholds"),
        n_per_archetype=args.n_per_archetype, n_members=args.members)
    t = study.thresholds
    lines = [
        "archetype threshold study",
        f"normal floor (25th pct):        {t.normal_floor:.6e} m^2",
        f"compromised ceiling (75th pct): {t.compromised_ceiling:.6e} m^2",
        f"band separated: {t.compromised_ceiling < t.normal_floor}",
        f"member classification kappa {study.kappa:.4f}, "
        f"accuracy {study.accuracy:.4f}",
        f"Kruskal-Wallis H {study.kruskal.statistic:.3f}, "
        f"p {study.kruskal.p_value:.3e} ({study.kruskal.method})",
    ]
    out = _resolve(args, workdir, "out", "thresholds.json", must_exist=False)
    _emit_report(out, "thresholds", {"study": study.to_dict()},
                 make_provenance(config.config_hash(), config.seed,
                                 stage="thresholds"),
                 _report_text(lines))
    return 0


def _pipeline_from_workdir(args, workdir, config) -> TrainedPipeline:
    stage1, stage2 = _load_models(args, workdir, config)
    calibration = CalibrationFit.from_dict(read_json(
        _resolve(args, workdir, "calibration", "calibration.json", True),
        "calibration")["fit"])
    reference = ReferencePopulation.from_dict(read_json(
        _resolve(args, workdir, "reference", "reference.json", True),
        "reference")["reference"])
    stage1_doc = read_json(
        _resolve(args, workdir, "stage1_model", "stage1_model.json", True), "model")
    stage2_doc = read_json(
        _resolve(args, workdir, "stage2_model", "stage2_model.json", True), "model")
    return TrainedPipeline(
        config=config, stage1=stage1, stage2=stage2, calibration=calibration,
        stage1_report=FitReport.from_dict(stage1_doc["fit_report"]),
        stage2_report=FitReport.from_dict(stage2_doc["fit_report"]),
        reference=reference)


def _cmd_sensitivity(args) -> int:
    config = _load_config(args)
    workdir = _workdir(args)
    _write_config_copy(config, workdir)
    stage1, stage2 = _load_models(args, workdir, config)
    patient = _patient_from_args(args)
    rng = substream(config.seed, *_patient_key("sensitivity", args))
    scan = sensitivity_scan(patient, stage1, stage2, config.priors, config, rng)
    lines = [f"sensitivity scan (age {float(args.age):g} y, "
             f"IOP {float(args.iop):g} mmHg)",
             f"{'scenario':<13} {'parameter':<8} {'d_median%':>10} {'d_cv%':>10}"]
    for scenario, row in scan.table.items():
        for parameter in PARAMETERS:
            cell = row[parameter]
            lines.append(f"{scenario:<13} {parameter:<8} "
                         f"{cell['d_median_pct']:>+10.2f} "
                         f"{cell['d_cv_pct']:>+10.2f}")
    tag = args.id or f"age{float(args.age):g}_iop{float(args.iop):g}"
    out = _resolve(args, workdir, "out", f"sensitivity_{tag}.json",
                   must_exist=False)
    _emit_report(out, "report", {"scan": scan.to_dict()},
                 make_provenance(config.config_hash(), config.seed,
                                 stage="sensitivity", patient_id=tag),
                 _report_text(lines))
    return 0


def _cmd_profile_svg(args) -> int:
    config = _load_config(args)
    workdir = _workdir(args)
    profile_path = pathlib.Path(args.profile)
    if not profile_path.exists():
        raise CliError(f"profile {profile_path} does not exist; "
                       "run `ocuflow infer` first")
    profile = PosteriorProfile.from_dict(
        read_json(profile_path, "profile")["profile"])
    reference = ReferencePopulation.from_dict(read_json(
        _resolve(args, workdir, "reference", "reference.json", True),
        "reference")["reference"])
    svg = render_radar_svg(profile, reference,
                           max_draw_polylines=args.max_draws)
    out = (pathlib.Path(args.out) if args.out
           else profile_path.with_suffix(".svg"))
    out.write_text(svg, encoding="utf-8")
    sys.stdout.write(f"wrote {out}\n")
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="pipeline configuration JSON file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--workdir",
                        help="artifact directory (default ./artifacts or "
                             "$OCUFLOW_WORKDIR)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ocuflow",
        description="Two-stage probabilistic inverse framework for ocular "
                    "hydrodynamics")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a training dataset CSV")
    _add_common(p)
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--n", type=int, help="row count (default from config)")
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--stage1-model", dest="stage1_model",
                   help="stage-1 model JSON (stage 2 only)")
    p.add_argument("--calibration", help="calibration JSON (stage 2 only)")
    p.set_defaults(fn=_cmd_generate)

    p = sub.add_parser("calibrate", help="fit the emulator bias line")
    _add_common(p)
    p.add_argument("--out", help="output JSON path")
    p.set_defaults(fn=_cmd_calibrate)

    p = sub.add_parser("train", help="train a stage model from its dataset")
    _add_common(p)
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--data", help="input dataset CSV")
    p.add_argument("--out", help="output model JSON path")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("infer", help="profile one patient from (age, IOP)")
    _add_common(p)
    p.add_argument("--age", type=float, required=True, help="age in years")
    p.add_argument("--iop", type=float, required=True,
                   help="measured IOP in mmHg")
    p.add_argument("--id", help="patient tag for the output filename")
    p.add_argument("--out", help="output profile JSON path")
    p.add_argument("--stage1-model", dest="stage1_model")
    p.add_argument("--stage2-model", dest="stage2_model")
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("validate",
                       help="agreement statistics of profiles vs measured")
    _add_common(p)
    p.add_argument("--profiles", required=True,
                   help="directory of profile JSON artifacts")
    p.add_argument("--measured", required=True,
                   help="CSV with columns id, c_trab_ul_min_mmhg")
    p.add_argument("--resamples", type=int, default=1000,
                   help="bootstrap resamples (default 1000)")
    p.add_argument("--out", help="output report JSON path")
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("thresholds",
                       help="derive and exercise archetype risk thresholds")
    _add_common(p)
    p.add_argument("--n-per-archetype", type=int, default=40)
    p.add_argument("--members", type=int, default=20)
    p.add_argument("--out", help="output thresholds JSON path")
    p.add_argument("--stage1-model", dest="stage1_model")
    p.add_argument("--stage2-model", dest="stage2_model")
    p.add_argument("--calibration")
    p.add_argument("--reference")
    p.set_defaults(fn=_cmd_thresholds)

    p = sub.add_parser("sensitivity",
                       help="prior perturbation scan for one patient")
    _add_common(p)
    p.add_argument("--age", type=float, required=True)
    p.add_argument("--iop", type=float, required=True, help="IOP in mmHg")
    p.add_argument("--id", help="patient tag for the output filename")
    p.add_argument("--out", help="output report JSON path")
    p.add_argument("--stage1-model", dest="stage1_model")
    p.add_argument("--stage2-model", dest="stage2_model")
    p.set_defaults(fn=_cmd_sensitivity)

    p = sub.add_parser("profile-svg", help="render a profile as a radar SVG")
    _add_common(p)
    p.add_argument("--profile", required=True, help="profile JSON artifact")
    p.add_argument("--reference", help="reference population JSON")
    p.add_argument("--max-draws", type=int, default=100,
                   help="faint per-draw polylines to render (default 100)")
    p.add_argument("--out", help="output SVG path")
    p.set_defaults(fn=_cmd_profile_svg)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        sys.stderr.write(json.dumps(
            {"error": {"type": "usage", "message": str(exc)}}) + "\n")
        return 2
    except (ValueError, KeyError, FileNotFoundError, RuntimeError) as exc:
        sys.stderr.write(json.dumps(
            {"error": {"type": type(exc).__name__, "message": str(exc)}}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
