import numpy as np
import pytest

from risk_trading import (
    ACTIONS,
    AgentConfig,
    AgentKind,
    AtomGrid,
    EnvState,
    InvalidParameterError,
    NumericFaultError,
    Transition,
    build_agent,
    builtin_agent,
    default_config,
)
from risk_trading.agents import (
    CategoricalModel,
    CriticPair,
    ImplicitQuantileModel,
    QModel,
    QuantileModel,
    c51_act,
    c51_loss,
    categorical_scores,
    config_with,
    cosine_embedding,
    dqn_act,
    dqn_loss,
    dqn_td_target,
    dueling_q,
    epsilon_greedy,
    iqn_act,
    iqn_loss,
    make_batch,
    qrdqn_act,
    qrdqn_loss,
    quantile_midpoints,
    quantile_scores,
    with_networks,
)
from risk_trading.models import N_ACTIONS, WINDOW_LENGTH
from risk_trading.nn_core import FinalActivation, NetworkSpec, build_network


INPUT_DIM = 2


def constant_network(outputs, final=FinalActivation.NONE, group_size=None):
    """Sequence network whose output ignores the input: zero weights, bias = outputs."""
    outputs = np.asarray(outputs, dtype=np.float64).ravel()
    spec = NetworkSpec(
        input_dim=INPUT_DIM, recurrent_layers=(2,), output_dim=outputs.size,
        final_activation=final, group_size=group_size,
    )
    net = build_network(spec, 0)
    net.params[:] = 0.0
    net.views()["out.b"][...] = outputs
    return net


def q_stub(values) -> QModel:
    return QModel({"q": constant_network(values)})


def categorical_stub(probs) -> CategoricalModel:
    probs = np.asarray(probs, dtype=np.float64)
    logits = np.log(np.maximum(probs, 1e-30))
    return CategoricalModel({"z": constant_network(logits, FinalActivation.SOFTMAX_PER_GROUP, probs.shape[1])})


def quantile_stub(values) -> QuantileModel:
    return QuantileModel({"quantiles": constant_network(values)})


def make_state(day: int = 9, fill: float = 0.0) -> EnvState:
    return EnvState(window=np.full((WINDOW_LENGTH, INPUT_DIM), fill), position=0, day=day)


def random_batch(size: int, seed: int = 0, done=None, rewards=None, actions=None):
    rng = np.random.default_rng(seed)
    transitions = []
    for k in range(size):
        state = EnvState(window=rng.standard_normal((WINDOW_LENGTH, INPUT_DIM)), position=0, day=9)
        next_state = EnvState(window=rng.standard_normal((WINDOW_LENGTH, INPUT_DIM)), position=0, day=10)
        transitions.append(Transition(
            state=state,
            action=int(actions[k]) if actions is not None else int(rng.choice(ACTIONS)),
            reward=float(rewards[k]) if rewards is not None else float(rng.normal()),
            next_state=next_state,
            done=bool(done[k]) if done is not None else bool(k % 2),
        ))
    return make_batch(transitions)


def tiny_config(kind, alpha: float = 1.0, **overrides) -> AgentConfig:
    values = dict(
        recurrent_layers=(3,), dense_layers=(4,), head_layers=(3,), psi_dim=3, dropout_rate=0.0,
        n_atoms=11, v_min=-10.0, v_max=10.0, n_quantiles=4, iqn_n=4, iqn_n_prime=3, iqn_k=4,
        embedding_dim=4, batch_size=4, learning_rate=1e-3,
    )
    values.update(overrides)
    return default_config(kind, alpha=alpha, **values)


def check_loss_gradient(model, compute, h: float = 1e-5):
    """Compare the analytic gradients of `compute().loss` with central differences."""
    analytic = compute().grads_for_model
    for name, net in model.networks.items():
        numeric = np.zeros_like(net.params)
        for k in range(net.n_params):
            saved = net.params[k]
            net.params[k] = saved + h
            up = compute().loss
            net.params[k] = saved - h
            down = compute().loss
            net.params[k] = saved
            numeric[k] = (up - down) / (2 * h)
        np.testing.assert_allclose(analytic[name], numeric, rtol=1e-4, atol=1e-7)


class _Picked:
    def __init__(self, result, key):
        self.loss = result.loss
        self.grads_for_model = result.grads[key]


class TestAgentConfig:
    def test_desk_preset_shrinks_units(self):
        config = default_config("dqn")
        assert config.recurrent_layers == (32,)
        assert config.dense_layers == (16, 8)

    def test_pca_solver_defaults_to_eigh(self):
        assert default_config("c51").pca_solver == "eigh"
        assert default_config("c51", pca_solver="power").pca_solver == "power"
        with pytest.raises(InvalidParameterError):
            default_config("c51", pca_solver="svd")

    def test_full_preset(self):
        config = default_config("dqn", preset="full")
        assert config.recurrent_layers == (128,)
        assert config.dense_layers == (64, 32)
        assert config.learning_rate == 1e-4
        assert config.batch_size == 32

    def test_risk_sensitive_c51_architecture(self):
        config = default_config("c51", alpha=0.3, preset="full")
        assert config.recurrent_layers == (128, 128)
        assert config.dense_layers == (128, 64)
        assert config.batch_size == 8

    def test_iqn_preset(self):
        config = default_config("iqn", preset="full")
        assert config.recurrent_layers == (128, 64)
        assert config.psi_dim == 32
        assert config.embedding_dim == 32
        assert (config.iqn_n, config.iqn_n_prime, config.iqn_k) == (64, 32, 64)

    def test_overrides_win(self):
        assert default_config("dqn", batch_size=7).batch_size == 7

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            default_config("sarsa")

    def test_alpha_range(self):
        with pytest.raises(InvalidParameterError):
            default_config("c51", alpha=0.0)

    def test_unresolvable_quantile_level(self):
        with pytest.raises(InvalidParameterError):
            default_config("qr_dqn", alpha=0.01, n_quantiles=51)

    def test_dueling_needs_dense_layer(self):
        with pytest.raises(InvalidParameterError):
            default_config("dueling_dqn", dense_layers=())

    def test_dict_round_trip(self):
        config = tiny_config("iqn", alpha=0.5)
        assert AgentConfig.from_dict(config.to_dict()) == config

    def test_unknown_dict_key(self):
        data = tiny_config("dqn").to_dict()
        data["momentum"] = 0.9
        with pytest.raises(InvalidParameterError):
            AgentConfig.from_dict(data)

    def test_config_with_validates(self):
        config = tiny_config("c51")
        assert config_with(config, alpha=0.5).alpha == 0.5
        with pytest.raises(InvalidParameterError):
            config_with(config, alpha=2.0)


class TestDqnAct:
    def test_picks_best_action(self):
        q = [0.0] * 6 + [1.0]
        pair = CriticPair(online=(q_stub(q), q_stub(q)), target=(q_stub(q), q_stub(q)))
        assert dqn_act(pair, make_state()) == 3

    def test_opposite_critics_tie_to_lowest_action(self):
        q = np.arange(7, dtype=float)
        pair = CriticPair(online=(q_stub(q), q_stub(-q)), target=(q_stub(q), q_stub(-q)))
        assert dqn_act(pair, make_state()) == -3

    def test_shift_invariance(self):
        q = np.array([0.1, 0.5, -0.2, 0.3, 0.0, 0.4, 0.2])
        base = CriticPair(online=(q_stub(q), q_stub(q)), target=(q_stub(q), q_stub(q)))
        shifted = CriticPair(online=(q_stub(q + 5), q_stub(q + 5)), target=(q_stub(q), q_stub(q)))
        assert dqn_act(base, make_state()) == dqn_act(shifted, make_state()) == -2


class TestDqnTarget:
    def setup_method(self):
        zeros = np.zeros(7)
        self.pair = CriticPair(
            online=(q_stub(zeros), q_stub(zeros)),
            target=(q_stub(np.ones(7)), q_stub(np.full(7, 3.0))),
        )

    def transition(self, reward: float, done: bool) -> Transition:
        return Transition(state=make_state(), action=0, reward=reward, next_state=make_state(10), done=done)

    def test_terminal_cutoff(self):
        assert dqn_td_target(self.pair, self.transition(2.0, True), 0.9) == 2.0

    def test_min_of_target_critics(self):
        assert dqn_td_target(self.pair, self.transition(0.0, False), 0.9) == pytest.approx(0.9)

    def test_myopic_limit(self):
        assert dqn_td_target(self.pair, self.transition(1.5, False), 0.0) == 1.5

    def test_invalid_gamma(self):
        with pytest.raises(InvalidParameterError):
            dqn_td_target(self.pair, self.transition(0.0, False), 1.5)


class TestDueling:
    def test_combination(self):
        np.testing.assert_allclose(dueling_q(1.0, [0.0, 2.0, 4.0]), [-1.0, 1.0, 3.0])

    def test_constant_advantages(self):
        np.testing.assert_allclose(dueling_q(2.5, np.full(7, 4.0)), np.full(7, 2.5))

    def test_batched(self):
        q = dueling_q(np.array([[1.0], [0.0]]), np.array([[0.0, 2.0], [1.0, 1.0]]))
        np.testing.assert_allclose(q, [[0.0, 2.0], [0.0, 0.0]])

    def test_dueling_model_gradient(self):
        config = tiny_config("dueling_dqn")
        model = QModel.build(config, INPUT_DIM, iter(range(10)), dueling=True)
        windows = np.random.default_rng(0).standard_normal((3, WINDOW_LENGTH, INPUT_DIM))
        adjoint = np.random.default_rng(1).standard_normal((3, N_ACTIONS))
        model.forward_train(windows, None)
        analytic = model.backward(adjoint)
        h = 1e-5
        for name, net in model.networks.items():
            numeric = np.zeros_like(net.params)
            for k in range(net.n_params):
                saved = net.params[k]
                net.params[k] = saved + h
                up = float((model.predict(windows) * adjoint).sum())
                net.params[k] = saved - h
                down = float((model.predict(windows) * adjoint).sum())
                net.params[k] = saved
                numeric[k] = (up - down) / (2 * h)
            np.testing.assert_allclose(analytic[name], numeric, rtol=1e-4, atol=1e-7)


class TestDqnLoss:
    def test_zero_error_gives_zero_loss(self):
        zeros = np.zeros(7)
        pair = CriticPair(online=(q_stub(zeros), q_stub(zeros)), target=(q_stub(zeros), q_stub(zeros)))
        batch = random_batch(4, rewards=np.zeros(4))
        result = dqn_loss(pair, batch, 0.9)
        assert result.loss == 0.0
        assert np.all(result.per_sample == 0.0)

    def test_gradient_matches_finite_differences(self):
        config = tiny_config("dqn")
        models = [QModel.build(config, INPUT_DIM, iter(range(k, k + 3))) for k in (0, 10)]
        pair = CriticPair(online=tuple(models), target=tuple(m.copy() for m in models))
        batch = random_batch(4, seed=2)
        check_loss_gradient(models[0], lambda: _Picked(dqn_loss(pair, batch, 0.9), "q1"))

    def test_importance_weights_scale_loss(self):
        config = tiny_config("dqn")
        models = [QModel.build(config, INPUT_DIM, iter(range(k, k + 3))) for k in (0, 10)]
        pair = CriticPair(online=tuple(models), target=tuple(m.copy() for m in models))
        batch = random_batch(4, seed=3)
        plain = dqn_loss(pair, batch, 0.9).loss
        halved = dqn_loss(pair, batch, 0.9, weights=np.full(4, 0.5)).loss
        assert halved == pytest.approx(0.5 * plain)


class TestC51:
    def test_risk_neutral_picks_higher_mean(self):
        grid = AtomGrid(-1.0, 1.0, 3)
        probs = np.tile([1.0, 0.0, 0.0], (7, 1))
        probs[3] = [0.5, 0.5, 0.0]
        probs[4] = [0.25, 0.0, 0.75]
        assert c51_act(categorical_stub(probs), make_state(), grid) == 1

    def test_cvar_changes_the_choice(self):
        grid = AtomGrid(-1.0, 2.0, 6)
        probs = np.zeros((7, 6))
        probs[:, 0] = 1.0
        probs[3] = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0]
        probs[4] = [0.5, 0.0, 0.0, 0.0, 0.0, 0.5]
        scores = categorical_scores(probs, grid, 0.5)
        assert scores[3] == pytest.approx(0.2)
        assert scores[4] == pytest.approx(-1.0)
        model = categorical_stub(probs)
        assert c51_act(model, make_state(), grid, alpha=0.5) == 0
        assert c51_act(model, make_state(), grid, alpha=1.0) == 1

    def test_identical_distributions_tie_to_lowest(self):
        grid = AtomGrid(-1.0, 1.0, 3)
        probs = np.tile([0.2, 0.3, 0.5], (7, 1))
        assert c51_act(categorical_stub(probs), make_state(), grid, alpha=0.4) == -3

    def test_terminal_reward_on_atom(self):
        grid = AtomGrid(-1.0, 1.0, 3)
        probs = np.tile([0.2, 0.3, 0.5], (7, 1))
        online, target = categorical_stub(probs), categorical_stub(probs)
        batch = random_batch(1, done=[True], rewards=[0.0], actions=[2])
        result = c51_loss(online, target, batch, grid, 0.9)
        np.testing.assert_allclose(result.targets[0], [0.0, 1.0, 0.0])
        assert result.loss == pytest.approx(-np.log(0.3), rel=1e-9)

    def test_perfect_fit(self):
        grid = AtomGrid(-1.0, 1.0, 3)
        probs = np.tile([1e-12, 1.0, 1e-12], (7, 1))
        batch = random_batch(2, done=[True, True], rewards=[0.0, 0.0])
        result = c51_loss(categorical_stub(probs), categorical_stub(probs), batch, grid, 0.9)
        assert result.loss == pytest.approx(0.0, abs=1e-9)

    def test_projection_matches_hand_computation(self):
        grid = AtomGrid(0.0, 2.0, 3)
        target_probs = np.tile([0.2, 0.5, 0.3], (7, 1))
        online = categorical_stub(np.tile([1.0 / 3.0] * 3, (7, 1)))
        batch = random_batch(1, done=[False], rewards=[0.25], actions=[0])
        result = c51_loss(online, categorical_stub(target_probs), batch, grid, 0.9)
        # shifted atoms 0.25, 1.15, 2.05 -> clipped to 2.0
        expected = np.array([0.2 * 0.75, 0.2 * 0.25 + 0.5 * 0.85, 0.5 * 0.15 + 0.3])
        np.testing.assert_allclose(result.targets[0], expected, atol=1e-9)

    def test_gradient_matches_finite_differences(self):
        config = tiny_config("c51", n_atoms=5, v_min=-2.0, v_max=2.0)
        online = CategoricalModel.build(config, INPUT_DIM, iter(range(3)))
        target = CategoricalModel.build(config, INPUT_DIM, iter(range(5, 8)))
        grid = AtomGrid(-2.0, 2.0, 5)
        batch = random_batch(3, seed=4)
        check_loss_gradient(online, lambda: _Picked(c51_loss(online, target, batch, grid, 0.9), "main"))


class TestQrDqn:
    def setup_method(self):
        values = np.full((7, 4), -10.0)
        values[0] = [-2.0, -1.0, 0.0, 1.0]
        values[1] = [-0.5, -0.5, -0.5, -0.5]
        self.model = quantile_stub(values)

    def test_cvar_prefers_narrow_distribution(self):
        assert qrdqn_act(self.model, make_state(), 4, alpha=0.5) == -2

    def test_risk_neutral_tie_goes_to_lower_index(self):
        assert qrdqn_act(self.model, make_state(), 4, alpha=1.0) == -3

    def test_all_equal_outputs(self):
        assert qrdqn_act(quantile_stub(np.zeros((7, 4))), make_state(), 4, alpha=0.5) == -3

    def test_scores_sort_before_truncating(self):
        scores = quantile_scores(np.array([[1.0, -2.0, 0.0, -1.0]]), 0.5)
        np.testing.assert_allclose(scores, [-1.5])

    def test_midpoints(self):
        np.testing.assert_allclose(quantile_midpoints(4), [0.125, 0.375, 0.625, 0.875])

    def test_exact_fit(self):
        model = quantile_stub(np.full((7, 1), 2.0))
        batch = random_batch(2, done=[True, True], rewards=[2.0, 2.0])
        result = qrdqn_loss(model, model.copy(), batch, 1, 1.0, 0.9)
        assert result.loss == 0.0

    def test_gradient_matches_finite_differences(self):
        config = tiny_config("qr_dqn")
        online = QuantileModel.build(config, INPUT_DIM, iter(range(3)))
        target = QuantileModel.build(config, INPUT_DIM, iter(range(5, 8)))
        batch = random_batch(3, seed=5)
        check_loss_gradient(online, lambda: _Picked(qrdqn_loss(online, target, batch, 4, 1.0, 0.9), "main"))


class _LevelStub:
    """T(s, a, β) = β for action −3, 0.4 for action −2, −1 elsewhere."""

    def quantiles(self, windows, betas):
        betas = np.asarray(betas)
        out = np.full(betas.shape + (N_ACTIONS,), -1.0)
        out[..., 0] = betas
        out[..., 1] = 0.4
        return out


class TestIqn:
    def zero_model(self) -> ImplicitQuantileModel:
        model = ImplicitQuantileModel.build(tiny_config("iqn"), INPUT_DIM, iter(range(3)))
        for net in model.networks.values():
            net.params[:] = 0.0
        return model

    def test_cosine_embedding_at_zero(self):
        np.testing.assert_allclose(cosine_embedding(np.zeros(3), 5), np.ones((3, 5)))

    def test_cosine_embedding_values(self):
        np.testing.assert_allclose(cosine_embedding(np.array([0.5]), 2)[0], [0.0, -1.0], atol=1e-12)

    def test_zero_model_terminal_zero_reward(self):
        model = self.zero_model()
        batch = random_batch(2, done=[True, True], rewards=[0.0, 0.0])
        result = iqn_loss(model, model.copy(), batch, 4, 3, 1.0, 0.9, np.random.default_rng(0))
        assert result.loss == 0.0

    def test_single_level_hand_value(self):
        model = self.zero_model()
        batch = random_batch(1, done=[True], rewards=[1.0])
        half = np.array([[0.5]])
        result = iqn_loss(
            model, model.copy(), batch, 1, 1, 1.0, 0.9, np.random.default_rng(0),
            betas=half, target_betas=half, policy_betas=half,
        )
        assert result.loss == pytest.approx(0.25)

    def test_risk_neutral_prefers_higher_mean(self):
        action = iqn_act(_LevelStub(), make_state(), 10_000, 1.0, np.random.default_rng(0))
        assert action == -3

    def test_cvar_prefers_safe_action(self):
        action = iqn_act(_LevelStub(), make_state(), 10_000, 0.2, np.random.default_rng(0))
        assert action == -2

    def test_single_sample_is_repeatable(self):
        first = iqn_act(_LevelStub(), make_state(), 1, 1.0, np.random.default_rng(42))
        second = iqn_act(_LevelStub(), make_state(), 1, 1.0, np.random.default_rng(42))
        assert first == second

    def test_gradient_matches_finite_differences(self):
        config = tiny_config("iqn")
        online = ImplicitQuantileModel.build(config, INPUT_DIM, iter(range(3)))
        target = ImplicitQuantileModel.build(config, INPUT_DIM, iter(range(5, 8)))
        batch = random_batch(3, seed=6)
        rng = np.random.default_rng(7)
        betas = rng.uniform(size=(3, 4))
        target_betas = rng.uniform(size=(3, 3))
        policy_betas = rng.uniform(size=(3, 4))

        def compute():
            result = iqn_loss(
                online, target, batch, 4, 3, 1.0, 0.9, np.random.default_rng(0),
                betas=betas, target_betas=target_betas, policy_betas=policy_betas,
            )
            return _Picked(result, "main")

        check_loss_gradient(online, compute)


def random_states(n: int, seed: int = 0) -> list[EnvState]:
    rng = np.random.default_rng(seed)
    return [
        EnvState(window=rng.standard_normal((WINDOW_LENGTH, INPUT_DIM)), position=0, day=9)
        for _ in range(n)
    ]


class TestRiskNeutralReduction:
    """At alpha = 1 every distributional agent acts greedily on the mean of its distribution."""

    def test_c51_uses_distribution_mean(self):
        agent = build_agent(tiny_config("c51", 1.0), INPUT_DIM, np.random.default_rng(1))
        atoms = agent.grid.atoms
        for state in random_states(1000, seed=1):
            probs = agent.online["main"].predict(state.window[None])[0]
            assert agent.act(state) == ACTIONS[int(np.argmax(probs @ atoms))]

    def test_qr_dqn_uses_quantile_mean(self):
        agent = build_agent(tiny_config("qr_dqn", 1.0), INPUT_DIM, np.random.default_rng(2))
        for state in random_states(1000, seed=2):
            quantiles = agent.online["main"].predict(state.window[None])[0]
            assert agent.act(state) == ACTIONS[int(np.argmax(quantiles.mean(axis=-1)))]

    def test_iqn_samples_the_whole_unit_interval(self):
        agent = build_agent(tiny_config("iqn", 1.0), INPUT_DIM, np.random.default_rng(3))
        k = agent.config.iqn_k
        for i, state in enumerate(random_states(1000, seed=3)):
            taus = np.random.default_rng(i).uniform(0.0, 1.0, size=(1, k))
            values = agent.online["main"].quantiles(state.window[None], taus)[0].mean(axis=0)
            assert agent.act(state, np.random.default_rng(i)) == ACTIONS[int(np.argmax(values))]


class TestEpsilonGreedy:
    def test_no_exploration(self):
        rng = np.random.default_rng(0)
        assert all(epsilon_greedy(2, 0.0, rng) == 2 for _ in range(1000))

    def test_full_exploration_is_uniform(self):
        rng = np.random.default_rng(1)
        draws = 100_000
        actions = np.array([epsilon_greedy(0, 1.0, rng) for _ in range(draws)])
        p = 1.0 / 7.0
        sigma = np.sqrt(draws * p * (1 - p))
        for a in ACTIONS:
            assert abs(np.sum(actions == a) - draws * p) < 3 * sigma

    def test_half_exploration(self):
        rng = np.random.default_rng(2)
        draws = 100_000
        hits = sum(epsilon_greedy(1, 0.5, rng) == 1 for _ in range(draws))
        p = 0.5 + 0.5 / 7.0
        assert abs(hits - draws * p) < 3 * np.sqrt(draws * p * (1 - p))

    def test_invalid_epsilon(self):
        with pytest.raises(InvalidParameterError):
            epsilon_greedy(0, 1.5, np.random.default_rng(0))


class TestAgents:
    @pytest.mark.parametrize("kind,alpha", [
        ("dqn", 1.0),
        ("prioritized_dqn", 1.0),
        ("dueling_dqn", 1.0),
        ("prioritized_dueling_dqn", 1.0),
        ("c51", 0.5),
        ("qr_dqn", 0.5),
        ("iqn", 0.5),
    ])
    def test_learn_updates_online_and_target(self, kind, alpha):
        config = tiny_config(kind, alpha=alpha)
        agent = build_agent(config, INPUT_DIM, np.random.default_rng(0))
        before_online = {k: v.params.copy() for k, v in agent.networks().items() if k.startswith("online")}
        before_target = {k: v.params.copy() for k, v in agent.networks().items() if k.startswith("target")}
        agent.train_mode()
        result = agent.learn(random_batch(4, seed=8), np.random.default_rng(1), np.random.default_rng(2))
        assert np.isfinite(result.loss)
        assert result.priorities.shape == (4,)
        assert np.all(result.priorities > 0.0)
        after = agent.networks()
        assert any(not np.array_equal(after[k].params, v) for k, v in before_online.items())
        assert any(not np.array_equal(after[k].params, v) for k, v in before_target.items())
        agent.eval_mode()
        assert agent.act(make_state(fill=0.3), np.random.default_rng(3)) in ACTIONS

    def test_same_seed_same_agent(self):
        config = tiny_config("c51")
        first = build_agent(config, INPUT_DIM, np.random.default_rng(5))
        second = build_agent(config, INPUT_DIM, np.random.default_rng(5))
        for key, net in first.networks().items():
            assert np.array_equal(net.params, second.networks()[key].params)

    def test_targets_start_as_copies(self):
        agent = build_agent(tiny_config("dqn"), INPUT_DIM, np.random.default_rng(0))
        nets = agent.networks()
        for key, net in nets.items():
            if key.startswith("online."):
                twin = nets["target." + key[len("online."):]]
                assert np.array_equal(net.params, twin.params)
                assert net.params is not twin.params

    def test_rebuild_from_networks(self):
        agent = build_agent(tiny_config("iqn", alpha=0.5), INPUT_DIM, np.random.default_rng(0))
        clone = with_networks(agent.config, agent.networks())
        state = make_state(fill=0.1)
        assert clone.act(state, np.random.default_rng(4)) == agent.act(state, np.random.default_rng(4))

    def test_non_finite_loss_is_a_numeric_fault(self):
        agent = build_agent(tiny_config("dqn"), INPUT_DIM, np.random.default_rng(0))
        batch = random_batch(4, seed=1)
        batch.rewards[0] = np.nan
        with pytest.raises(NumericFaultError):
            agent.learn(batch)

    def test_builtin_agents(self):
        assert builtin_agent("flat").act(make_state()) == 0
        assert builtin_agent("long").act(make_state()) == 3
        with pytest.raises(InvalidParameterError):
            builtin_agent("short")

    def test_extra_trees_has_no_networks(self):
        with pytest.raises(InvalidParameterError):
            build_agent(default_config(AgentKind.EXTRA_TREES), INPUT_DIM, np.random.default_rng(0))
