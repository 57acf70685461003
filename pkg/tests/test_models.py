import itertools

import numpy as np
import pytest
from scipy.special import logsumexp, softmax

from conftest import gaussian_blobs
from prosodid.core.errors import ModelError
from prosodid.models import (
    CRFParams,
    LabeledDataset,
    TrainedModel,
    crf_forward_backward,
    knn_classify,
    lstm_predict_proba,
    parse_kind,
    predict,
    rbf_kernel,
    registered_kinds,
    smo_solve,
    train_crf,
    train_lstm,
    train_majority,
    train_model,
    train_random_forest,
    train_svm,
    viterbi_decode,
)
from prosodid.models.crf import SequenceBatch, crf_objective, forward_backward, sequence_score
from prosodid.models.knn import train_knn
from prosodid.models.lstm import init_weights, lstm_loss_and_grads, pad_batch
from prosodid.models.svm import decision_values
from prosodid.schemas.experiment import ClassifierConfig, LSTMParams

FAST = ClassifierConfig(lstm=LSTMParams(hidden=8, epochs=5, batch=16))


def _flat(X, y, n_classes):
    """Every vector its own length-1 sequence."""
    X = np.asarray(X, dtype=np.float64)
    return LabeledDataset(X=X, y=np.asarray(y), lengths=np.ones(len(X), dtype=np.int64), n_classes=n_classes)


def _relative_error(analytic, numeric):
    return np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic + numeric), 1e-12)


# ============= Contract =============

def test_registered_kinds():
    assert registered_kinds() == ["crf", "knn", "lstm", "majority", "rf", "svm"]


def test_parse_kind():
    assert parse_kind("svm") == ("svm", None)
    assert parse_kind("lstm@d3") == ("lstm", 3)
    for bad in ("svm@d1", "lstm@x", "lstm@d"):
        with pytest.raises(ModelError):
            parse_kind(bad)


def test_unknown_kind():
    train, _ = gaussian_blobs()
    with pytest.raises(ModelError):
        train_model("bayes", train)
    with pytest.raises(ModelError):
        predict(TrainedModel(kind="bayes", params={}, dim=4, n_classes=3), train)


def test_dataset_validation():
    with pytest.raises(ModelError):
        LabeledDataset(X=np.zeros((3, 2)), y=np.zeros(2), lengths=[3], n_classes=2)
    with pytest.raises(ModelError):
        LabeledDataset(X=np.zeros((3, 2)), y=np.zeros(3), lengths=[2], n_classes=2)
    with pytest.raises(ModelError):
        LabeledDataset(X=np.zeros((2, 2)), y=[0, 2], lengths=[2], n_classes=2)


@pytest.mark.parametrize("kind", ["knn", "svm", "rf", "crf", "lstm", "majority"])
def test_empty_dataset_and_dim_mismatch(kind, blobs):
    train, _ = blobs
    model = train_model(kind, train, FAST)
    assert len(predict(model, LabeledDataset.from_sequences([], [], 3))) == 0

    wrong = LabeledDataset.from_sequences([np.zeros((4, 5))], [np.zeros(4, dtype=int)], 3)
    with pytest.raises(ModelError):
        predict(model, wrong)


@pytest.mark.parametrize("kind", ["knn", "svm", "rf", "crf", "lstm@d2", "majority"])
def test_save_load_identical_predictions(kind, blobs, tmp_path):
    train, _ = blobs
    test, _ = gaussian_blobs(seed=7)
    model = train_model(kind, train, FAST, seed=3)
    path = tmp_path / "model.npz"
    model.save(path)
    loaded = TrainedModel.load(path)
    assert loaded.kind == model.kind
    assert loaded.meta == model.meta
    assert np.array_equal(predict(loaded, test), predict(model, test))


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "bad.npz"
    path.write_bytes(b"not a model")
    with pytest.raises(ModelError):
        TrainedModel.load(path)


@pytest.mark.parametrize("kind", ["knn", "svm", "rf", "crf"])
def test_separable_blobs_fit_training_set(kind, blobs):
    train, _ = blobs
    model = train_model(kind, train, ClassifierConfig(knn={"k": 1}))
    assert np.array_equal(predict(model, train), train.y)


def test_training_is_deterministic(blobs):
    train, _ = blobs
    for kind in ("rf", "lstm", "crf", "svm"):
        first = train_model(kind, train, FAST, seed=5)
        second = train_model(kind, train, FAST, seed=5)
        for key in first.params:
            assert np.array_equal(first.params[key], second.params[key]), (kind, key)


# ============= kNN =============

def _knn_oracle(X, y, query, k, n_classes):
    distances = [float(np.sqrt(np.sum((x - query) ** 2))) for x in X]
    nearest = sorted(range(len(X)), key=lambda i: (distances[i], i))[:k]
    counts = [0] * n_classes
    sums = [0.0] * n_classes
    for i in nearest:
        counts[y[i]] += 1
        sums[y[i]] += distances[i]
    best = max(counts)
    tied = [c for c in range(n_classes) if counts[c] == best]
    return min(tied, key=lambda c: (sums[c] / counts[c], c))


def test_knn_identity():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 3))
    y = rng.integers(0, 4, size=30)
    train = _flat(X, y, 4)
    for i in (0, 7, 29):
        assert knn_classify(train, X[i], k=1) == y[i]


def test_knn_majority_beats_distance():
    close_b = [[0.5, 0], [0, 0.5], [-0.5, 0], [0, -0.5]]
    far_a = [[1.0, 0], [0, 1.0], [-1.0, 0], [0, -1.0], [1.0, 1.0], [-1.0, -1.0]]
    outliers = [[100.0, 100.0 + i] for i in range(5)]
    X = close_b + far_a + outliers
    y = [1] * 4 + [0] * 6 + [1] * 5
    assert knn_classify(_flat(X, y, 2), [0.0, 0.0], k=10) == 0


def test_knn_vote_tie_goes_to_closer_class():
    X = [[1.0], [2.0], [-0.5], [-1.0]]
    y = [0, 0, 1, 1]
    assert knn_classify(_flat(X, y, 2), [0.0], k=4) == 1


def test_knn_matches_brute_force():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 4))
    y = rng.integers(0, 5, size=200)
    train = _flat(X, y, 5)
    for query in rng.normal(size=(100, 4)):
        assert knn_classify(train, query, k=10) == _knn_oracle(X, y, query, 10, 5)


def test_knn_k_too_large():
    train = _flat(np.zeros((3, 2)), [0, 1, 0], 2)
    with pytest.raises(ModelError):
        knn_classify(train, [0.0, 0.0], k=4)
    with pytest.raises(ModelError):
        train_knn(train, k=4)


def test_knn_query_dim_mismatch():
    with pytest.raises(ModelError):
        knn_classify(_flat(np.zeros((3, 2)), [0, 1, 0], 2), [0.0, 0.0, 0.0], k=1)


# ============= SVM =============

def test_rbf_kernel_identity():
    X = np.random.default_rng(0).normal(size=(10, 5)) * 10
    assert np.allclose(np.diag(rbf_kernel(X, X, 12.0790)), 1.0)
    assert rbf_kernel(np.zeros((1, 1)), np.ones((1, 1)), 1.0)[0, 0] == pytest.approx(np.exp(-0.5))


def test_smo_dual_feasibility():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 3))
    y = np.where(X[:, 0] + 0.5 * rng.normal(size=40) > 0, 1.0, -1.0)
    c = 10.0
    sol = smo_solve(rbf_kernel(X, X, 1.0), y, c)
    assert sol.converged
    assert np.all(sol.alpha >= 0.0)
    assert np.all(sol.alpha <= c)
    assert abs(np.sum(sol.alpha * y)) <= 1e-6


def test_svm_separable_two_classes():
    rng = np.random.default_rng(3)
    X = np.vstack([rng.uniform(-3, -1, size=(20, 2)), rng.uniform(1, 3, size=(20, 2))])
    y = np.array([0] * 20 + [1] * 20)
    train = _flat(X, y, 2)
    model = train_svm(train, c=100.0, sigma=2.0)
    assert np.array_equal(predict(model, train), y)


def test_svm_one_vs_one_pairs(blobs):
    train, _ = blobs
    model = train_svm(train)
    assert model.params["pairs"].tolist() == [[0, 1], [0, 2], [1, 2]]
    assert model.meta["standardized"]


def test_svm_permutation_invariant():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(30, 2))
    y = (X[:, 0] + 0.7 * rng.normal(size=30) > 0).astype(int)
    order = rng.permutation(30)
    queries = rng.normal(size=(20, 2))
    a = train_svm(_flat(X, y, 2), c=1.0, sigma=1.0, tol=1e-9)
    b = train_svm(_flat(X[order], y[order], 2), c=1.0, sigma=1.0, tol=1e-9)
    assert np.allclose(decision_values(a, queries), decision_values(b, queries), atol=1e-6)


def test_svm_single_class():
    with pytest.raises(ModelError):
        train_svm(_flat(np.zeros((4, 2)), [1, 1, 1, 1], 3))


# ============= Random Forest =============

def test_forest_single_label():
    rng = np.random.default_rng(0)
    model = train_random_forest(_flat(rng.normal(size=(20, 3)), [2] * 20, 5), n_trees=10)
    assert np.all(predict(model, _flat(rng.normal(size=(15, 3)), [0] * 15, 5)) == 2)


def test_forest_threshold_split():
    rng = np.random.default_rng(1)
    X = np.concatenate([rng.uniform(-2, -1, 25), rng.uniform(1, 2, 25)]).reshape(-1, 1)
    y = np.array([0] * 25 + [1] * 25)
    train = _flat(X, y, 2)
    model = train_random_forest(train, n_trees=50, seed=0)
    assert np.array_equal(predict(model, train), y)
    internal = model.params["feature"] >= 0
    assert np.all((model.params["threshold"][internal] > -1) & (model.params["threshold"][internal] < 1))


def test_forest_seed_determinism(blobs):
    train, _ = blobs
    test, _ = gaussian_blobs(seed=9)
    first = predict(train_random_forest(train, seed=4), test)
    second = predict(train_random_forest(train, seed=4), test)
    assert np.array_equal(first, second)


# ============= CRF =============

def _random_params(rng, n_classes, dim):
    return CRFParams(
        emission=rng.normal(size=(n_classes, dim)),
        transition=rng.normal(size=(n_classes, n_classes)),
        bias=rng.normal(size=n_classes),
    )


def test_crf_uniform_model():
    log_z, marginals, pairwise = crf_forward_backward(CRFParams.zeros(5, 3), np.ones((4, 3)))
    assert log_z == pytest.approx(4 * np.log(5))
    assert np.allclose(marginals, 0.2)
    assert np.allclose(pairwise, 0.04)


def test_crf_single_position():
    rng = np.random.default_rng(0)
    params = _random_params(rng, 3, 2)
    x = rng.normal(size=(1, 2))
    _, marginals, _ = crf_forward_backward(params, x)
    assert np.allclose(marginals[0], softmax(params.emission @ x[0] + params.bias))


@pytest.mark.parametrize("length,n_classes", [(1, 2), (3, 3), (5, 2), (6, 3)])
def test_crf_partition_matches_enumeration(length, n_classes):
    rng = np.random.default_rng(length * 10 + n_classes)
    params = _random_params(rng, n_classes, 2)
    x = rng.normal(size=(length, 2))
    log_z, marginals, pairwise = crf_forward_backward(params, x)

    labelings = list(itertools.product(range(n_classes), repeat=length))
    scores = np.array([sequence_score(params, x, lab) for lab in labelings])
    brute = logsumexp(scores)
    assert abs(np.exp(log_z - brute) - 1.0) < 1e-8

    probs = np.exp(scores - brute)
    for t in range(length):
        expected = [probs[[lab[t] == c for lab in labelings]].sum() for c in range(n_classes)]
        assert np.allclose(marginals[t], expected, atol=1e-9)
    assert np.allclose(marginals.sum(axis=1), 1.0, atol=1e-9)
    if length > 1:
        assert np.allclose(pairwise.sum(axis=(1, 2)), 1.0, atol=1e-9)


def test_crf_padded_batch_matches_single():
    rng = np.random.default_rng(5)
    params = _random_params(rng, 3, 2)
    short, long_ = rng.normal(size=(2, 2)), rng.normal(size=(5, 2))
    log_z, marginals, _, _ = forward_backward(params, SequenceBatch.from_sequences([short, long_]))
    for k, seq in enumerate((short, long_)):
        single_z, single_m, _ = crf_forward_backward(params, seq)
        assert log_z[k] == pytest.approx(single_z)
        assert np.allclose(marginals[k, :len(seq)], single_m)
    assert np.all(marginals[0, 2:] == 0.0)


def test_viterbi_factorized_chain():
    rng = np.random.default_rng(1)
    params = _random_params(rng, 4, 3)
    params.transition[:] = 0.0
    x = rng.normal(size=(7, 3))
    expected = np.argmax(x @ params.emission.T + params.bias, axis=1)
    assert np.array_equal(viterbi_decode(params, x), expected)


@pytest.mark.parametrize("seed", range(5))
def test_viterbi_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    n_classes = 2 + seed % 2
    length = 2 + seed
    params = _random_params(rng, n_classes, 2)
    x = rng.normal(size=(length, 2))
    labelings = list(itertools.product(range(n_classes), repeat=length))
    best = max(labelings, key=lambda lab: sequence_score(params, x, lab))
    assert viterbi_decode(params, x).tolist() == list(best)


def test_viterbi_all_ties():
    assert viterbi_decode(CRFParams.zeros(3, 2), np.zeros((5, 2))).tolist() == [0, 0, 0, 0, 0]


def test_crf_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    n_classes, dim = 2, 2
    batch = SequenceBatch.from_sequences([rng.normal(size=(3, dim))], [np.array([0, 1, 1])])
    theta = rng.normal(size=n_classes * dim + n_classes * n_classes + n_classes)
    _, grad = crf_objective(theta, batch, n_classes, l2=1.0)
    h = 1e-5
    numeric = np.zeros_like(theta)
    for i in range(len(theta)):
        step = np.zeros_like(theta)
        step[i] = h
        numeric[i] = (crf_objective(theta + step, batch, n_classes, 1.0)[0]
                      - crf_objective(theta - step, batch, n_classes, 1.0)[0]) / (2 * h)
    assert _relative_error(grad, numeric) < 1e-4


def test_crf_training_accuracy_and_monotone_objective():
    rng = np.random.default_rng(3)
    labels = np.array([0] * 5 + [1] * 5 + [0] * 5 + [1] * 5)
    x = np.where(labels == 0, -1.0, 1.0)[:, None] + 0.1 * rng.normal(size=(20, 1))
    train = LabeledDataset.from_sequences([x], [labels], 2)
    model = train_crf(train, l2=1.0, max_iter=100)
    assert np.array_equal(predict(model, train), labels)
    history = model.meta["objective_history"]
    assert history
    assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))


def test_crf_stops_on_gradient_norm():
    rng = np.random.default_rng(3)
    labels = np.array([0] * 5 + [1] * 5 + [0] * 5 + [1] * 5)
    x = np.where(labels == 0, -1.0, 1.0)[:, None] + 0.1 * rng.normal(size=(20, 1))
    train = LabeledDataset.from_sequences([x], [labels], 2)

    tight = train_crf(train, l2=1.0, max_iter=500, gtol=1e-3)
    assert tight.meta["converged"]
    assert tight.meta["grad_norm"] < 1e-3
    assert tight.meta["iterations"] < 500

    loose = train_crf(train, l2=1.0, max_iter=500, gtol=1e-1)
    assert loose.meta["grad_norm"] < 1e-1
    assert loose.meta["iterations"] <= tight.meta["iterations"]

    capped = train_crf(train, l2=1.0, max_iter=1, gtol=1e-12)
    assert capped.meta["iterations"] <= 1
    assert not capped.meta["converged"]


# ============= LSTM =============

def test_lstm_pad_batch_delay():
    X, targets, mask = pad_batch([np.ones((3, 2)), np.ones((1, 2))], [np.array([1, 2, 0]), np.array([2])], delay=2)
    assert X.shape == (5, 2, 2)
    assert mask[:, 0].tolist() == [False, False, True, True, True]
    assert mask[:, 1].tolist() == [False, False, True, False, False]
    assert targets[2:, 0].tolist() == [1, 2, 0]
    assert np.all(X[3:, 0] == 0.0)


def test_lstm_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    weights = init_weights(3, 3, LSTMParams(hidden=2, init_scale=0.5), rng)
    weights["b"] = rng.normal(scale=0.3, size=weights["b"].shape)
    weights["by"] = rng.normal(scale=0.3, size=weights["by"].shape)
    X = rng.normal(size=(3, 2, 3))
    targets = rng.integers(0, 3, size=(3, 2))
    mask = np.array([[True, True], [True, True], [True, False]])
    _, grads = lstm_loss_and_grads(weights, X, targets, mask)

    h = 1e-5
    for key, value in weights.items():
        numeric = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            saved = value[idx]
            value[idx] = saved + h
            plus, _ = lstm_loss_and_grads(weights, X, targets, mask)
            value[idx] = saved - h
            minus, _ = lstm_loss_and_grads(weights, X, targets, mask)
            value[idx] = saved
            numeric[idx] = (plus - minus) / (2 * h)
        assert _relative_error(grads[key], numeric) < 1e-4, key


def test_lstm_softmax_rows_sum_to_one(blobs):
    train, _ = blobs
    model = train_lstm(train, LSTMParams(hidden=8, epochs=2, delay=3), seed=0)
    x, _ = train.sequences()[0]
    probs = lstm_predict_proba(model, x)
    assert probs.shape == (len(x), 3)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_lstm_overfits_constant_sequences():
    rng = np.random.default_rng(1)
    sequences, labels = [], []
    for k in range(20):
        c = k % 4
        length = int(rng.integers(3, 7))
        sequences.append(np.tile(np.eye(4)[c], (length, 1)))
        labels.append(np.full(length, c))
    train = LabeledDataset.from_sequences(sequences, labels, 4)
    model = train_lstm(train, LSTMParams(hidden=16, batch=10, epochs=200, lr=0.5), seed=0)
    assert np.mean(predict(model, train) == train.y) >= 0.99
    assert model.meta["loss_history"][-1] < model.meta["loss_history"][0]


def test_lstm_delay_variant(blobs):
    train, _ = blobs
    model = train_model("lstm@d4", train, FAST)
    assert model.meta["delay"] == 4
    assert len(predict(model, train)) == len(train)


# ============= Majority =============

def test_majority_baseline():
    model = train_majority(_flat(np.zeros((5, 1)), [2, 1, 2, 1, 0], 3))
    assert model.meta["label"] == 1
    assert np.all(predict(model, _flat(np.ones((4, 1)), [0] * 4, 3)) == 1)
