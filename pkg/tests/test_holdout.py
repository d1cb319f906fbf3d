"""Scripted holdout agents, plan skip rules, learned-holdout registry."""

import numpy as np
import pytest

from coopgrid import holdout as ho
from coopgrid import scripted
from coopgrid import world as w
from coopgrid import checkpoints as ckpt


def env_for(task="set_table", layout_seed=1, **kw):
    return w.create_env(task, layout_seed, w.WorldConfig(**kw))


def test_three_scripted_holdouts():
    agents = ho.build_scripted_holdouts("tidy_house")
    assert [a.plan_id for a in agents] == ["noop", "object0", "object1"]
    with pytest.raises(ValueError):
        ho.build_scripted_holdouts("wash_dishes")


def test_noop_agent_only_noops():
    env = env_for("tidy_house", 2)
    state, _ = env.reset(0)
    plan = ho.build_scripted_holdouts("tidy_house")[0].make_plan(env)
    for _ in range(30):
        a = scripted.scripted_step(plan, env, state, 1)
        assert a == w.ACT_NOOP
        env.step_joint(state, (w.ACT_NOOP, a), obs_mask=(False, False))


def test_object0_plan_opens_before_pick_on_set_table():
    env = env_for("set_table", 1)
    plan = scripted.object_plan(env, 0)
    actions = [s.action for s in plan.steps]
    assert w.ACT_OPEN_0 in actions and w.ACT_PICK_0 in actions
    assert actions.index(w.ACT_OPEN_0) < actions.index(w.ACT_PICK_0)
    assert w.ACT_PICK_1 not in actions and w.ACT_PLACE_1 not in actions


def test_object_agent_completes_its_half():
    env = env_for("set_table", 1)
    state, _ = env.reset(0)
    plans = (scripted.object_plan(env, 0), scripted.noop_plan())
    ok, collided, ticks = scripted.run_scripted_pair(env, state, plans)
    assert not ok, "half the task must not succeed alone"
    sim = state.clone()
    # replay to check object 0 reached its goal
    p = (plans[0].fresh(), plans[1].fresh())
    need = [True, True]
    actions = [w.ACT_NOOP, w.ACT_NOOP]
    while not sim.done:
        for i in (0, 1):
            if need[i]:
                actions[i] = scripted.scripted_step(p[i], env, sim, i)
        out = env.step_joint(sim, actions, obs_mask=(False, False))
        need = list(out.decision_flags)
    assert sim.objects[0].location == sim.objects[0].goal
    assert sim.objects[1].location != sim.objects[1].goal


def test_skip_when_partner_holds_the_object():
    env = env_for("tidy_house", 2)
    state, _ = env.reset(0)
    plan = scripted.object_plan(env, 0)
    # partner snatches object 0
    state.objects[0].location = ("held", 1)
    state.agents[1].holding = 0
    a = scripted.scripted_step(plan, env, state, 0)
    assert a == w.ACT_NOOP, "whole object-0 plan collapses once the partner has it"


def test_skip_when_object_already_delivered():
    env = env_for("tidy_house", 2)
    state, _ = env.reset(0)
    plan = scripted.object_plan(env, 0)
    state.objects[0].location = state.objects[0].goal
    assert scripted.scripted_step(plan, env, state, 0) == w.ACT_NOOP


def test_open_step_skipped_when_partner_opened():
    env = env_for("set_table", 1)
    state, _ = env.reset(0)
    state.recep_open[0] = True
    plan = scripted.object_plan(env, 0)
    a = scripted.scripted_step(plan, env, state, 0)
    assert a == w.ACT_NAVIGATE_BASE + 0, "skips straight to navigate-to-object"


def test_plan_exhausted_noops_forever():
    env = env_for("tidy_house", 2)
    state, _ = env.reset(0)
    plan = scripted.ScriptedPlan(())
    for _ in range(3):
        assert scripted.scripted_step(plan, env, state, 0) == w.ACT_NOOP


def test_scripted_agents_ignore_partner_position():
    """Not reactive: the partner's location never alters the chosen action."""
    env = env_for("tidy_house", 2)
    state, _ = env.reset(0)
    spawn_cells = sorted(env.layout.spawn_region)
    choices = []
    for cell in spawn_cells[:6]:
        if cell == state.agents[0].pos:
            continue
        trial = state.clone()
        trial.agents[1].pos = cell
        plan = scripted.object_plan(env, 0)
        choices.append(scripted.scripted_step(plan, env, trial, 0))
    assert len(set(choices)) == 1


def test_env_sanity_complementary_pair():
    """Complementary scripted agents finish tidy_house whenever they do not
    collide (subset of the acceptance run)."""
    env = env_for("tidy_house", 3)
    done = 0
    ep = 0
    while done < 20:
        state, _ = env.reset(ep)
        ep += 1
        ok, collided, _ = scripted.run_scripted_pair(
            env, state, (scripted.object_plan(env, 0), scripted.object_plan(env, 1))
        )
        if collided:
            continue
        assert ok, f"collision-free complementary run failed on episode {ep - 1}"
        done += 1


def test_full_task_agent_with_noop_partner():
    for task in w.TASKS:
        env = env_for(task, 4)
        for ep in range(10):
            state, _ = env.reset(ep)
            ok, collided, _ = scripted.run_scripted_pair(
                env, state, (scripted.full_task_plan(env), scripted.noop_plan())
            )
            assert ok and not collided


# ------------------------------------------------------------------ #
# learned holdouts

def _fake_gtcoord_run(tmp_path, seed, task="tidy_house"):
    from coopgrid import nets
    from coopgrid.runio import write_json

    d = tmp_path / f"gt{seed}"
    (d / "checkpoints").mkdir(parents=True)
    for m in range(2):
        rng = np.random.default_rng(seed * 10 + m)
        bank = nets.init_bank(nets.policy_shapes(21, 8, 20), rng, {"obs_dim": 21, "hidden": 8})
        bank.flat[:] = rng.standard_normal(bank.n_params)
        ckpt.save(d / "checkpoints" / f"stage1_final_m{m}.ckpt", bank)
    write_json(d / "report.json", {"algo": "gtcoord", "task": task, "seed": seed})
    return d


def test_learned_holdouts_four_seeds_eight_policies(tmp_path):
    runs = [_fake_gtcoord_run(tmp_path, s) for s in (101, 102, 103, 104)]
    agents = ho.build_learned_holdouts("tidy_house", runs)
    assert len(agents) == 8
    digests = {ckpt.params_digest(a.bank) for a in agents}
    assert len(digests) == 8
    assert {a.seed for a in agents} == {101, 102, 103, 104}


def test_holdout_set_and_registry_roundtrip(tmp_path):
    runs = [_fake_gtcoord_run(tmp_path, s) for s in (7, 8)]
    agents = ho.build_holdout_set("tidy_house", runs)
    assert len(agents) == 3 + 4
    reg = tmp_path / "holdouts.json"
    ho.write_registry(reg, "tidy_house", agents)
    task, loaded = ho.load_registry(reg)
    assert task == "tidy_house"
    assert [a.name for a in loaded] == [a.name for a in agents]
    assert loaded[4].bank is not None


def test_missing_checkpoint_is_reported(tmp_path):
    d = tmp_path / "broken"
    (d / "checkpoints").mkdir(parents=True)
    with pytest.raises(FileNotFoundError):
        ho.build_learned_holdouts("tidy_house", [d])


def test_task_mismatch_rejected(tmp_path):
    run = _fake_gtcoord_run(tmp_path, 9, task="set_table")
    with pytest.raises(ValueError):
        ho.build_learned_holdouts("tidy_house", [run])


def test_seed_disjointness_check(tmp_path):
    runs = [_fake_gtcoord_run(tmp_path, s) for s in (1, 2)]
    agents = ho.build_holdout_set("tidy_house", runs)
    ho.check_seed_disjoint(agents, coord_seed=5)
    with pytest.raises(ValueError):
        ho.check_seed_disjoint(agents, coord_seed=2)
