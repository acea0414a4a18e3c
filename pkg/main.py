"""
Operator CLI.

    python main.py fixtures workspace/world
    python main.py gen-data dataset_spec.json --env workspace/env
    python main.py train-target service_definition.json --out workspace --env workspace/env
    python main.py serve workspace/targets/<name>/service.json --budget 3000 --info service_info.json --env workspace/env
    python main.py assess service_info.json --planner mock --seed 0
    python main.py bench matrix.json
    python main.py analyze workspace/

Exit status: 0 on success (for assess: the assessment completed), 1 when an
assessment ended incomplete, 2 on an error.
"""
import argparse
import json
import logging
import sys
import time
from pathlib import Path

from agents.base import TargetServiceInfo
from agents.config import RunConfig
from config_loader import get_config, get_service_config, get_training_config, reset_config
from core.errors import AuditError
from core.nn import TrainConfig
from env.fixtures import (
    build_fixture_world, build_service, load_fixture_service, load_service_definition, publish_shadow,
    register_dataset,
)
from env.synthetic import DatasetSpec
from pipeline.assessment_pipeline import ServiceFile, run_assessment
from pipeline.bench_pipeline import BenchMatrix, run_bench
from reporting.analyzer import analyze_runs
from reporting.cost import PriceTable
from reporting.trace import write_findings
from server import serve
from service.target import ServiceConfig

logger = logging.getLogger("main")

EXIT_OK = 0
EXIT_INCOMPLETE = 1
EXIT_ERROR = 2


def _read_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def run_config_from(args) -> RunConfig:
    """Config file values, with every flag that was given taking precedence"""
    price_table = PriceTable.model_validate(_read_json(args.price_table)) if args.price_table else None
    return RunConfig.from_config(
        planner=args.planner,
        seed=args.seed,
        max_steps=args.max_steps,
        runtime_limit_s=args.runtime_limit,
        query_budget=args.budget,
        workspace_root=args.workspace,
        price_table=price_table,
    )


# ================= Commands =================

def cmd_fixtures(args) -> int:
    world = build_fixture_world(args.root, seed=args.seed or 0)
    print(f"[Fixtures] {len(world.services)} services and {len(world.controls)} controls under {world.root}")
    print(f"[Fixtures] attacker environment: {world.env_dir}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    spec = DatasetSpec.model_validate(_read_json(args.spec))
    record = register_dataset(spec, args.env)
    print(f"[GenData] {record.name}: {record.n_samples} rows, {record.num_classes} classes, "
          f"attributes {[a.name for a in record.attributes] or 'none'}")
    return EXIT_OK


def cmd_train_target(args) -> int:
    definition = load_service_definition(args.definition)
    seed = args.seed or 0
    training = get_training_config()
    train_config = TrainConfig(
        learning_rate=training.get("learning_rate", 1e-3),
        batch_size=training.get("batch_size", 64),
        epochs=args.epochs or training.get("epochs", 300),
        seed=seed,
    )
    data_dir = Path(args.env) / "data" if args.env else None
    service = build_service(definition, Path(args.out), seed, train_config, data_dir)
    if args.env and definition.publish:
        publish_shadow(definition, service, args.env)
    print(f"[TrainTarget] {service.name}: artifact {service.artifact_path}")
    print(f"[TrainTarget] train accuracy {service.train_accuracy:.3f}, holdout accuracy {service.holdout_accuracy}")
    return EXIT_OK


def cmd_serve(args) -> int:
    fixture = load_fixture_service(args.service)
    defaults = get_service_config()
    handle = serve(ServiceConfig(
        artifact_path=fixture.artifact_path,
        expose_embedding=fixture.expose_embedding,
        query_budget=args.budget,
        host=args.host or defaults.get("host", "127.0.0.1"),
        port=args.port if args.port is not None else defaults.get("port", 5000),
        max_batch_rows=defaults.get("max_batch_rows", 256),
    ))
    if args.info:
        info = ServiceFile(
            target=TargetServiceInfo.model_validate(fixture.service_info(handle.predict_url, handle.embedding_url,
                                                                         args.budget)),
            env_dir=Path(args.env).resolve(),
            bundle_path=Path(fixture.bundle_path).resolve(),
        ).dump(args.info)
        print(f"[Serve] service info written to {info}")
    print(f"[Serve] {fixture.name} listening on {handle.base_url}")
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        handle.shutdown()
    return EXIT_OK


def cmd_assess(args) -> int:
    service = ServiceFile.load(args.service)
    output = run_assessment(service.target, service.env_dir, service.bundle_path,
                            run_config_from(args), run_id=args.run_id)
    if output.error:
        print(f"[Assess] {output.error}")
    print(f"[Assess] complete: {output.complete}")
    for name, path in output.paths.items():
        print(f"[Assess] {name}: {path}")
    return EXIT_OK if output.complete else EXIT_INCOMPLETE


def cmd_bench(args) -> int:
    output = run_bench(BenchMatrix.load(args.matrix), run_config_from(args))
    print(output.rows.to_string(index=False))
    print(output.steps.to_string(index=False))
    for target, rate in output.completion.items():
        print(f"[Bench] completion {target}: {rate:.2f}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    findings = analyze_runs(args.traces)
    for f in findings:
        flags = f.flags()
        print(f"[Analyze] {f.trace}: {f.steps} steps, complete={f.complete}, "
              f"{'clean' if not flags else json.dumps(flags)}")
    path = write_findings(Path(args.traces) / "findings.jsonl", [f.model_dump() for f in findings])
    print(f"[Analyze] {len(findings)} traces, findings written to {path}")
    return EXIT_OK


# ================= Parser =================

def build_parser() -> argparse.ArgumentParser:
    run_flags = argparse.ArgumentParser(add_help=False)
    run_flags.add_argument("--planner", type=str, default=None, help="mock, remote or faulty:<script>")
    run_flags.add_argument("--seed", type=int, default=None)
    run_flags.add_argument("--max-steps", type=int, default=None)
    run_flags.add_argument("--runtime-limit", type=float, default=None, help="seconds per agent")
    run_flags.add_argument("--budget", type=int, default=None, help="query budget")
    run_flags.add_argument("--workspace", type=str, default=None, help="workspace root")
    run_flags.add_argument("--price-table", type=str, default=None, help="JSON price table file")

    parser = argparse.ArgumentParser(description="Black-box inference-attack risk assessment")
    parser.add_argument("--config", type=str, default=None, help="config file (default: config.json)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixtures", parents=[run_flags], help="build the desk-scale fixture world")
    p.add_argument("root")
    p.set_defaults(func=cmd_fixtures)

    p = sub.add_parser("gen-data", help="generate a dataset and register it in an environment")
    p.add_argument("spec", help="dataset spec JSON")
    p.add_argument("--env", required=True, help="attacker environment directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-target", parents=[run_flags], help="train a target model and its evaluation bundle")
    p.add_argument("definition", help="service definition JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--env", default=None, help="publish the shadow half into this environment")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_train_target)

    p = sub.add_parser("serve", help="serve a trained target")
    p.add_argument("service", help="service.json written by train-target")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--info", default=None, help="write an assess-ready service info file here")
    p.add_argument("--env", default="env", help="attacker environment recorded in the info file")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("assess", parents=[run_flags], help="assess one service")
    p.add_argument("service", help="service info file")
    p.add_argument("--run-id", default=None)
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("bench", parents=[run_flags], help="run an assessment matrix")
    p.add_argument("matrix")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("analyze", help="analyze recorded traces")
    p.add_argument("traces", help="run directory or a directory of runs")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.config:
        reset_config()
        get_config(args.config)
    try:
        return args.func(args)
    except (AuditError, OSError, ValueError) as e:
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
