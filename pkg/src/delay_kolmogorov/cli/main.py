"""
コマンドラインの入口: simulate / invasion / classify / audit

終了コード: 0 成功，2 設定エラー，3 数値的な打ち切り（発散・非有限な係数），
4 --strict 指定時の inconclusive な分類．
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

from ..audit.certificate import parse_certificate
from ..audit.checks import (
    check_drift_condition,
    check_extinction_bounds,
    check_generator_bound,
    check_growth_condition,
    check_lipschitz,
    check_moment_bound,
    check_nondegeneracy,
    grid_search_certificate,
)
from ..classify.regime import classify_regime
from ..errors import CertificateError, ConfigError, DivergenceError, ModelValidationError, NonFiniteCoefficientError
from ..invasion.estimate import (
    InvasionEstimate,
    closed_form_estimate,
    estimate_lambda,
    lambda_table,
    lyapunov_exponent,
)
from ..measures.occupation import accumulate_all, stationarity_diagnostic
from ..model.spec import ModelSpec
from ..model.zoo import build_zoo_model
from ..sdde.integrator import default_initial, integrate_replicates
from ..sdde.segment import Segment
from ..utils.serialization import write_json
from .config import RunConfig, load_run_config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INCONCLUSIVE = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="delay-kolmogorov",
        description="確率遅延Kolmogorov系のシミュレーション・侵入率・分類・仮定の監査",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("simulate", "軌道を積分して trajectory.csv と occupation.json を書き出す"),
        ("invasion", "侵入率 λ_i(π_I) を推定して invasion.json を書き出す"),
        ("classify", "組み込みモデルの決定木で分類して regime.json を書き出す"),
        ("audit", "証明書定数で仮定を標本監査して audit.json を書き出す"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="設定ファイル（JSON または YAML）")
        p.add_argument("--out", help="出力ディレクトリ（設定の output.dir を上書き）")
        p.add_argument("--threads", type=int, default=1, help="レプリケートを並列に積分するスレッド数")
        p.add_argument("--verbose", action="store_true", help="DEBUGログを出す")
        if name in ("simulate", "invasion"):
            p.add_argument("--face", help="面（カンマ区切りのラベルまたは添字，空文字で空集合）")
        if name == "invasion":
            p.add_argument("--species", help="侵入する種（ラベルまたは添字）")
            p.add_argument(
                "--closed-form",
                action=argparse.BooleanOptionalAction,
                default=None,
                help="閉じた式で評価する（設定の invasion.closed_form を上書き）",
            )
        if name == "classify":
            p.add_argument(
                "--closed-form",
                action=argparse.BooleanOptionalAction,
                default=None,
                help="閉じた式があれば使う（設定の classify.closed_form を上書き）",
            )
            p.add_argument("--strict", action="store_true", help="inconclusive なら終了コード4")
    return parser


def _parse_key(token: str):
    token = token.strip()
    return int(token) if token.lstrip("-").isdigit() else token


def _parse_face(text: Optional[str]) -> Optional[List[Any]]:
    if text is None:
        return None
    text = text.strip().strip("{}")
    return [_parse_key(t) for t in text.split(",") if t.strip()]


def _initial(model: ModelSpec, config: RunConfig, values: Optional[List[float]], face=None) -> Segment:
    if values is None:
        return default_initial(model, config.sim, face)
    if len(values) != model.n:
        raise ConfigError(f"初期値の長さ {len(values)} がモデルの次元 {model.n} と一致しません")
    return Segment.constant(values, model.r, config.sim.resolve_dt(model.r))


def _simulate(config: RunConfig, args: argparse.Namespace, model: ModelSpec, out: Path) -> int:
    task = config.simulate
    face = _parse_face(args.face) if args.face is not None else task.face
    initial = _initial(model, config, task.initial, face)
    trajectories = integrate_replicates(model, initial, config.sim, face=face, threads=args.threads)
    if task.replicate >= len(trajectories):
        raise ConfigError(f"simulate.replicate={task.replicate} がレプリケート数 {len(trajectories)} 以上です")
    trajectories[task.replicate].to_csv(out / "trajectory.csv")

    report: Dict[str, Any] = {"config": config.echo(model)}
    divergences = [t.divergence for t in trajectories if t.diverged]
    kept = [t for t in trajectories if not t.diverged]
    if kept:
        stats = accumulate_all(kept, config.sim)
        report["occupation"] = stats.to_dict()
        if stats.se_available:
            report["stationarity"] = {k: v.to_dict() for k, v in stationarity_diagnostic(stats).items()}
    report["divergence"] = [d.to_dict() for d in divergences]
    write_json(out / "occupation.json", report)
    for trajectory in trajectories:
        trajectory.raise_if_diverged()
    return EXIT_OK


def _invasion(config: RunConfig, args: argparse.Namespace, model: ModelSpec, out: Path) -> int:
    task = config.invasion
    face = _parse_face(args.face) if args.face is not None else task.face
    species = _parse_key(args.species) if args.species is not None else task.species
    closed = task.closed_form if args.closed_form is None else args.closed_form
    echo = config.echo(model)
    if species is None:
        table = lambda_table(model, [face], config.sim, use_closed_form=closed, threads=args.threads)
        write_json(out / "invasion.json", {"config": echo, "estimates": [e.to_dict() for e in table]})
        _raise_if_all_diverged(table)
        return EXIT_OK
    if closed:
        estimate = closed_form_estimate(model, face, species)
        if estimate is None:
            raise ConfigError(
                f"{model.name} の λ_{species}(π_{model.face_label(model.face_of(face))}) には閉じた式がありません"
            )
    elif task.method == "lyapunov-exponent":
        estimate = lyapunov_exponent(model, face, species, config.sim, threads=args.threads)
    else:
        estimate = estimate_lambda(model, face, species, config.sim, threads=args.threads)
    write_json(out / "invasion.json", dict(estimate.to_dict(), config=echo))
    _raise_if_all_diverged([estimate])
    return EXIT_OK


def _raise_if_all_diverged(estimates: Iterable[InvasionEstimate]) -> None:
    for estimate in estimates:
        if "all replicates diverged" in estimate.flags:
            raise DivergenceError(
                f"λ_{estimate.species_label}(π_{estimate.face_label}) の推定ですべてのレプリケートが発散しました"
            )


def _classify(config: RunConfig, args: argparse.Namespace, model: ModelSpec, out: Path) -> int:
    task = config.classify
    updates: Dict[str, Any] = {}
    if task.basin_horizon is not None:
        updates["horizon"] = task.basin_horizon
    if task.basin_replicates is not None:
        updates["replicates"] = task.basin_replicates
    basin_config = config.sim.model_copy(update=updates) if updates else None
    initial = _initial(model, config, task.initial) if task.initial is not None else None
    if initial is not None and task.basins and not bool((initial.now > 0).all()):
        raise ConfigError(f"classify.initial は全種が正でなければなりません: {task.initial}")
    report = classify_regime(
        model,
        config.sim,
        initial=initial,
        use_closed_form=task.closed_form if args.closed_form is None else args.closed_form,
        basins=task.basins,
        basin_config=basin_config,
        threads=args.threads,
    )
    write_json(out / "regime.json", dict(report.to_dict(), config=config.echo(model)))
    if report.inconclusive and args.strict:
        print(f"error: classification is inconclusive ({'; '.join(report.notes)})", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def _audit(config: RunConfig, args: argparse.Namespace, model: ModelSpec, out: Path) -> int:
    task = config.audit
    sampler = task.sampler
    result: Dict[str, Any] = {"config": config.echo(model)}
    if task.certificate is None:
        search = grid_search_certificate(model, sampler)
        result["search"] = search.to_dict()
        if search.certificate is None:
            raise CertificateError("格子探索で証明書が見つかりませんでした．audit.certificate を指定してください")
        cert = search.certificate
    else:
        cert = parse_certificate(task.certificate)
    result["certificate"] = cert.model_dump(mode="json")

    reports: List[Any] = []
    for check in task.checks:
        if check == "drift":
            reports.append(check_drift_condition(model, cert, sampler))
        elif check == "growth":
            reports.append(check_growth_condition(model, cert, sampler))
        elif check == "nondegeneracy":
            reports.append(check_nondegeneracy(model, sampler, task.epsilon, task.box_radius))
        elif check == "extinction":
            reports.extend(check_extinction_bounds(model, cert, sampler))
        elif check == "lipschitz":
            reports.append(check_lipschitz(model, sampler))
        elif check == "generator":
            segments = sampler.model_copy(update={"samples": task.generator_segments, "include_zero": False})
            drawn = segments.draw(model, floor=1e-3)
            for k in range(drawn.count):
                reports.append(
                    check_generator_bound(
                        model,
                        cert,
                        drawn.segment(k),
                        samples=task.generator_samples,
                        seed=config.sim.seed,
                        threads=args.threads,
                    )
                )
        elif check == "moment":
            reports.append(
                check_moment_bound(model, cert, default_initial(model, config.sim), config.sim, threads=args.threads)
            )
    result["reports"] = [r.to_dict() for r in reports]
    write_json(out / "audit.json", result)
    return EXIT_OK


_COMMANDS = {
    "simulate": _simulate,
    "invasion": _invasion,
    "classify": _classify,
    "audit": _audit,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    """CLIを実行して終了コードを返す"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        config = load_run_config(args.config)
        model = build_zoo_model(config.model.name, config.model.params)
        out = Path(args.out if args.out is not None else config.output.dir)
        out.mkdir(parents=True, exist_ok=True)
        logger.info(f"{args.command}: モデル {model.name}，出力先 {out}")
        return _COMMANDS[args.command](config, args, model, out)
    except (ConfigError, ModelValidationError, CertificateError) as e:
        _report_error(e)
        return EXIT_CONFIG
    except (DivergenceError, NonFiniteCoefficientError) as e:
        _report_error(e)
        return EXIT_NUMERICAL
    except ValueError as e:
        # ライブラリ側の引数検査（面に含まれる種など）
        _report_error(e)
        return EXIT_CONFIG


def _report_error(error: Exception) -> None:
    message = " ".join(str(error).split())
    print(f"error: {message}", file=sys.stderr)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
