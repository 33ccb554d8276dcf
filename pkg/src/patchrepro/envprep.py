"""Environment preparation: fix commit in, bootable snapshot out.

Resolves a fix commit into a task record (diff, parent, optional message,
sidecar attributes), checks out the tree at the parent commit, builds or
loads a guest image, smoke-tests boot, and captures the snapshot every run
starts from.  The whole pipeline is deterministic and never contacts the
network.
"""

import hashlib
import json
import os
import shutil
import subprocess
import time
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Set

from . import guestvm
from .errors import (
    BuildFailed,
    EmptyDiff,
    EnvBootFailed,
    MergeCommitRejected,
    UnknownCommit,
    UnknownProfile,
)
from .guestvm import SnapshotRef

VALID_PROFILES = ("baseline", "degraded_prompt", "no_utils", "no_gdb",
                  "no_commit_message")

# "syzbot-like" build manifest: memory-error detector and debug symbols on,
# dynamic-probe facilities off.  The exact upstream fuzzing config is not
# public; this named approximation is ours.
SYZBOT_LIKE_MANIFEST = [
    "CONFIG_KASAN=y",
    "CONFIG_KASAN_INLINE=y",
    "CONFIG_DEBUG_INFO=y",
    "CONFIG_DEBUG_INFO_DWARF4=y",
    "CONFIG_KPROBES=n",
    "CONFIG_FTRACE=n",
    "CONFIG_FUNCTION_TRACER=n",
]

BOOT_DEADLINE_EXTERNAL_S = 120.0
BOOT_DEADLINE_MOCK_S = 1.0


@dataclass
class PatchTask:
    case_id: str
    commit_id: str
    parent_commit_id: str
    diff_text: str
    commit_message: Optional[str] = None
    subsystem_label: Optional[str] = None
    vuln_type: Optional[str] = None  # UAF | DF | OOB | OTHER
    is_race: Optional[bool] = None
    commit_msg_level: Optional[int] = None  # 1 | 2 | 3
    submit_time: Optional[str] = None  # UTC ISO-8601
    ablations: Set[str] = field(default_factory=set)
    repo_ref: Optional[str] = None

    def to_json(self) -> str:
        d = asdict(self)
        d["ablations"] = sorted(self.ablations)
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PatchTask":
        d = json.loads(text)
        d["ablations"] = set(d.get("ablations", []))
        return cls(**d)


@dataclass
class BuilderSpec:
    builder_id: str
    kind: str  # "external_kernel_build" | "fixture"
    parameters: Dict[str, str] = field(default_factory=dict)


@dataclass
class ReproEnvironment:
    env_id: str
    source_root: str
    guest_image_ref: str
    config_manifest: List[str]
    snapshot_ref: SnapshotRef
    builder_id: str
    prep_log: str
    content_digest: str


def _git(repo, *args):
    proc = subprocess.run(["git", "-C", repo, *args],
                          capture_output=True, text=True)
    if proc.returncode != 0:
        raise UnknownCommit(proc.stderr.strip())
    return proc.stdout


def load_case_metadata(path) -> Dict[str, dict]:
    """Sidecar metadata: one record per case keyed by case_id."""
    with open(path, "r", encoding="utf-8") as fh:
        records = json.load(fh)
    if isinstance(records, list):
        return {r["case_id"]: r for r in records}
    return records


def resolve_task(repo_ref, commit_id, ablations=None,
                 metadata: Optional[dict] = None) -> PatchTask:
    """Turn a fix-commit id into a PatchTask.

    The parent is the commit's sole first parent; merge commits are rejected
    because "one commit prior" is ambiguous for them.
    """
    ablations = set(ablations or ())
    for a in ablations:
        if a not in VALID_PROFILES:
            raise UnknownProfile(a)

    full_id = _git(repo_ref, "rev-parse", "%s^{commit}" % commit_id).strip()
    parents = _git(repo_ref, "log", "-1", "--format=%P", full_id).split()
    if len(parents) != 1:
        raise MergeCommitRejected(
            "commit %s has %d parents" % (full_id, len(parents)))
    parent = parents[0]

    diff = _git(repo_ref, "diff", parent, full_id)
    if not diff.strip():
        raise EmptyDiff(full_id)

    message = None
    if "no_commit_message" not in ablations:
        message = _git(repo_ref, "log", "-1", "--format=%B", full_id).rstrip("\n")

    meta = dict(metadata or {})
    return PatchTask(
        case_id=meta.get("case_id", full_id[:12]),
        commit_id=full_id,
        parent_commit_id=parent,
        diff_text=diff,
        commit_message=message,
        subsystem_label=meta.get("subsystem"),
        vuln_type=meta.get("vuln_type"),
        is_race=meta.get("is_race"),
        commit_msg_level=meta.get("commit_msg_level"),
        submit_time=meta.get("submit_time"),
        ablations=ablations,
        repo_ref=os.path.abspath(repo_ref),
    )


def content_digest(commit_id, builder_id, config_manifest) -> str:
    blob = json.dumps([commit_id, builder_id, list(config_manifest)],
                      sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _checkout_parent(task: PatchTask, dest: str, log: List[str]):
    repo = task.repo_ref
    if repo is None or not os.path.isdir(repo):
        os.makedirs(dest, exist_ok=True)
        log.append("no repository reference; source_root left empty")
        return
    # Re-preparing the same environment starts from a clean checkout.
    if os.path.isdir(dest) and os.listdir(dest):
        shutil.rmtree(dest)
    os.makedirs(dest, exist_ok=True)
    proc = subprocess.run(
        ["git", "clone", "--quiet", "--no-checkout", repo, dest],
        capture_output=True, text=True)
    if proc.returncode != 0:
        raise BuildFailed("clone failed", prep_log=proc.stderr)
    proc = subprocess.run(
        ["git", "-C", dest, "checkout", "--quiet", task.parent_commit_id],
        capture_output=True, text=True)
    if proc.returncode != 0:
        raise BuildFailed("parent checkout failed", prep_log=proc.stderr)
    log.append("checked out %s" % task.parent_commit_id)


def prepare_environment(task: PatchTask, builder: BuilderSpec,
                        workdir: str) -> ReproEnvironment:
    """Deterministically build the reproduction environment.

    Fixture builders load a mock-guest scenario; external builders run the
    documented subprocess contract.  Either way the guest must pass the boot
    smoke test (answer ``echo ready``) before the snapshot is captured.
    """
    log: List[str] = []
    digest = content_digest(task.commit_id, builder.builder_id,
                            SYZBOT_LIKE_MANIFEST)
    env_id = "%s-%s" % (task.case_id, digest[:8])
    env_dir = os.path.join(workdir, env_id)
    os.makedirs(env_dir, exist_ok=True)
    source_root = builder.parameters.get(
        "source_root", os.path.join(env_dir, "source"))
    if "source_root" not in builder.parameters:
        _checkout_parent(task, source_root, log)

    if builder.kind == "fixture":
        scenario_path = builder.parameters["scenario"]
        scenario = guestvm.GuestScenario.load(scenario_path)
        guest = guestvm.MockGuest(scenario)
        handle = guestvm.GuestHandle(
            "mock",
            SnapshotRef("boot", "mock",
                        state={"scenario_path": scenario_path,
                               "guest_state": guest.state}),
            mock_guest=guest)
        deadline = time.monotonic() + BOOT_DEADLINE_MOCK_S
        out = guestvm.exec_console(handle, "echo ready", timeout_s=1.0)
        if "ready" not in out.text or out.timed_out or time.monotonic() > deadline:
            raise EnvBootFailed("guest never answered the boot sentinel")
        log.append("boot smoke test passed")
        snap = guestvm.create_snapshot(handle, scenario_path=scenario_path)
        image_ref = "mock:%s" % os.path.basename(scenario_path)
    elif builder.kind == "external_kernel_build":
        cmd = builder.parameters.get("command")
        if not cmd:
            raise BuildFailed("external builder requires a 'command' parameter")
        proc = subprocess.run(
            [cmd, "--source", source_root, "--out", env_dir,
             "--config", ",".join(SYZBOT_LIKE_MANIFEST)],
            capture_output=True, text=True)
        if proc.returncode != 0:
            raise BuildFailed("external build failed", prep_log=proc.stderr)
        log.append(proc.stdout)
        raise EnvBootFailed(
            "external backend boot validation requires a live hypervisor")
    else:
        raise BuildFailed("unknown builder kind %r" % builder.kind)

    prep_log = "\n".join(log)
    env = ReproEnvironment(
        env_id=env_id,
        source_root=source_root,
        guest_image_ref=image_ref,
        config_manifest=list(SYZBOT_LIKE_MANIFEST),
        snapshot_ref=snap,
        builder_id=builder.builder_id,
        prep_log=prep_log,
        content_digest=digest,
    )
    _write_env_dir(env_dir, task, env)
    return env


def _write_env_dir(env_dir, task, env):
    with open(os.path.join(env_dir, "task.json"), "w", encoding="utf-8") as fh:
        fh.write(task.to_json())
    manifest = {
        "builder_id": env.builder_id,
        "config_manifest": env.config_manifest,
        "content_digest": env.content_digest,
        "guest_image_ref": env.guest_image_ref,
        "snapshot_id": env.snapshot_ref.snapshot_id,
    }
    with open(os.path.join(env_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    with open(os.path.join(env_dir, "prep.log"), "w", encoding="utf-8") as fh:
        fh.write(env.prep_log + "\n")


def apply_capability_profile(env: ReproEnvironment, profile_id: str,
                             blocked_utilities=guestvm.DEFAULT_BLOCKED_UTILITIES
                             ) -> ReproEnvironment:
    """Apply a guest-image transform for the given profile.

    Only ``no_utils`` changes the image (the named utility binaries become
    unavailable inside the guest); every other profile is an identity here
    and acts on the prompt/tool surface instead.
    """
    if profile_id not in VALID_PROFILES:
        raise UnknownProfile(profile_id)
    if profile_id != "no_utils":
        return env
    state = {
        "scenario_path": env.snapshot_ref.state["scenario_path"],
        "guest_state": dict(env.snapshot_ref.state["guest_state"],
                            blocked_utilities=sorted(blocked_utilities)),
    }
    snap = guestvm.create_snapshot(state)
    return ReproEnvironment(
        env_id=env.env_id,
        source_root=env.source_root,
        guest_image_ref=env.guest_image_ref + "+no_utils",
        config_manifest=env.config_manifest,
        snapshot_ref=snap,
        builder_id=env.builder_id,
        prep_log=env.prep_log + "\napplied profile no_utils",
        content_digest=env.content_digest,
    )
