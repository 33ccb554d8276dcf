"""Command-line front end: run one session, serve tools, analyze corpora."""

import argparse
import json
import os
import sys
from decimal import Decimal

from . import analytics, envprep, sessionrunner, toolserver, verdict
from .sessionrunner import Budget, PriceTable, ScriptedModelClient


def _cmd_run(args):
    metadata = None
    if args.metadata:
        metadata = envprep.load_case_metadata(args.metadata).get(args.case_id)
    if metadata is None and args.case_id:
        metadata = {"case_id": args.case_id}
    ablations = set()
    if args.profile == "no_commit_message":
        ablations.add("no_commit_message")
    task = envprep.resolve_task(args.repo, args.commit, ablations=ablations,
                                metadata=metadata)
    builder = envprep.BuilderSpec(
        builder_id=args.builder_id, kind="fixture",
        parameters={"scenario": args.scenario})
    env = envprep.prepare_environment(task, builder, args.workdir)

    if not args.model.startswith("scripted:"):
        raise SystemExit("only scripted:<file> model clients are supported "
                         "offline; external endpoints need an adapter")
    client = ScriptedModelClient.from_file(args.model.split(":", 1)[1])

    budget = Budget(wall_clock_limit_s=args.budget_hours * 3600.0,
                    price_table=PriceTable.per_million(args.price_in,
                                                       args.price_out))
    profile = toolserver.PROFILES[args.profile]
    artifacts = sessionrunner.run_session(task, env, client, profile, budget,
                                          args.out)
    v = verdict.decide(args.out, case_id=task.case_id)
    verdict.write_verdict(args.out, v)
    print("termination=%s success=%s reason=%s"
          % (artifacts.termination, v.success, v.reason))
    return 0 if v.success else 1


def _cmd_serve_tools(args):
    with open(os.path.join(args.env, "task.json"), "r", encoding="utf-8") as fh:
        task = envprep.PatchTask.from_json(fh.read())
    with open(os.path.join(args.env, "manifest.json"), "r",
              encoding="utf-8") as fh:
        manifest = json.load(fh)
    scenario = manifest["guest_image_ref"].split(":", 1)[-1]
    builder = envprep.BuilderSpec(
        builder_id=manifest["builder_id"], kind="fixture",
        parameters={"scenario": os.path.join(args.env, scenario)
                    if not os.path.isabs(scenario) else scenario})
    env = envprep.prepare_environment(task, builder, args.env)
    server = toolserver.ToolServer(env, task, toolserver.PROFILES[args.profile])
    server.serve()
    return 0


def _cmd_analyze(args):
    metadata = envprep.load_case_metadata(args.metadata) if args.metadata else {}
    records = analytics.load_run_records(args.runs_dirs, metadata=metadata)
    tables = {}
    wanted = args.tables.split(",")
    if "overall" in wanted:
        tables["overall"] = analytics.summarize_runs(records)
    if "subsystem" in wanted:
        out = []
        for label, t in analytics.subsystem_tables(records).items():
            res = analytics.fisher_exact(t)
            out.append({"subsystem": label, "a": t.a, "b": t.b, "c": t.c,
                        "d": t.d, "odds_ratio": res.odds_ratio,
                        "p": res.p_two_sided})
        tables["subsystem"] = out
    if "race" in wanted:
        race = [r for r in records if r.is_race]
        nonrace = [r for r in records if r.is_race is False]
        tables["race"] = [
            {"group": "race", "n": len(race),
             "successes": sum(1 for r in race if r.success)},
            {"group": "non_race", "n": len(nonrace),
             "successes": sum(1 for r in nonrace if r.success)},
        ]
    if "type" in wanted:
        strata = analytics.type_race_strata(records)
        if strata:
            tables["type"] = {
                "mh_odds_ratio": analytics.mantel_haenszel_or(strata),
                "cmh": analytics.cmh_test(strata),
            }
    if "cutoff" in wanted and args.cutoff_date:
        t = analytics.cutoff_table(records, args.cutoff_date)
        res = analytics.fisher_exact(t)
        tables["cutoff"] = {"a": t.a, "b": t.b, "c": t.c, "d": t.d,
                            "odds_ratio": res.odds_ratio,
                            "p": res.p_two_sided}
    if "commitmsg" in wanted:
        by_level = {}
        for r in records:
            if r.commit_msg_level:
                by_level.setdefault(r.commit_msg_level, []).append(r)
        tables["commitmsg"] = [
            {"level": lvl, "n": len(rs),
             "successes": sum(1 for r in rs if r.success)}
            for lvl, rs in sorted(by_level.items())]
    if "convergence" in wanted:
        sets = []
        for runs_dir in args.runs_dirs:
            verdicts = {}
            for name in sorted(os.listdir(runs_dir)):
                path = os.path.join(runs_dir, name, "verdict.json")
                if os.path.isfile(path):
                    with open(path, "r", encoding="utf-8") as fh:
                        v = json.load(fh)
                    verdicts[v["case_id"]] = v["success"]
            if verdicts:
                sets.append(verdicts)
        tables["convergence"] = analytics.convergence_curve(sets)

    if args.format == "json":
        print(json.dumps(tables, indent=2, sort_keys=True, default=str))
    else:
        for name, table in tables.items():
            print("## %s" % name)
            rows = table if isinstance(table, list) else [table]
            for row in rows:
                if isinstance(row, dict):
                    print("\t".join("%s=%s" % (k, v)
                                    for k, v in sorted(row.items())))
                else:
                    print(row)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="patchrepro")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one reproduction session")
    p.add_argument("--commit", required=True)
    p.add_argument("--repo", required=True)
    p.add_argument("--profile", default="baseline",
                   choices=sorted(toolserver.PROFILES))
    p.add_argument("--model", required=True,
                   help="scripted:<file> or external:<endpoint>")
    p.add_argument("--budget-hours", type=float, default=10.0,
                   dest="budget_hours")
    p.add_argument("--out", required=True)
    p.add_argument("--scenario", required=True,
                   help="mock-guest scenario file")
    p.add_argument("--workdir", default=".patchrepro-envs")
    p.add_argument("--metadata", help="sidecar case metadata file")
    p.add_argument("--case-id", dest="case_id", default="")
    p.add_argument("--builder-id", dest="builder_id", default="fixture-v1")
    p.add_argument("--price-in", type=float, default=0.0, dest="price_in",
                   help="USD per million input tokens")
    p.add_argument("--price-out", type=float, default=0.0, dest="price_out",
                   help="USD per million output tokens")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("serve-tools",
                       help="speak JSON-RPC tools on stdin/stdout")
    p.add_argument("--env", required=True, help="environment directory")
    p.add_argument("--profile", default="baseline",
                   choices=sorted(toolserver.PROFILES))
    p.set_defaults(func=_cmd_serve_tools)

    p = sub.add_parser("analyze", help="statistics over run corpora")
    p.add_argument("runs_dirs", nargs="+")
    p.add_argument("--tables",
                   default="overall,subsystem,race,type,cutoff,commitmsg,convergence")
    p.add_argument("--cutoff-date", dest="cutoff_date", default="2024-09-30")
    p.add_argument("--metadata", help="sidecar case metadata file")
    p.add_argument("--format", choices=("tsv", "json"), default="tsv")
    p.set_defaults(func=_cmd_analyze)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
