#include <cmath>
#include <map>
#include <random>

#include "doctest.h"
#include "testing.hpp"

using namespace cutrec;
using cutrec::testing::gradcheck;

TEST_CASE("init_embeddings is deterministic and normal(0, 0.1)") {
  auto a = init_embeddings(2, 64, 7);
  auto b = init_embeddings(2, 64, 7);
  CHECK(a.values == b.values);
  CHECK_FALSE(init_embeddings(2, 64, 8).values == a.values);

  auto big = init_embeddings(1000, 1000, 3);
  double mean = 0.0;
  for (double v : big.values.data()) mean += v;
  mean /= 1e6;
  double var = 0.0;
  for (double v : big.values.data()) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / 1e6);
  CHECK(std::abs(mean) <= 0.001);
  CHECK(sd >= 0.099);
  CHECK(sd <= 0.101);

  CHECK_THROWS(init_embeddings(0, 4, 1));
  CHECK_THROWS(init_embeddings(4, 0, 1));
}

TEST_CASE("mf_score") {
  std::vector<double> u{1, 2}, i{3, -1}, z{0, 0};
  CHECK(mf_score(u, i) == 1.0);
  CHECK(mf_score(i, u) == mf_score(u, i));
  CHECK(mf_score(z, i) == 0.0);
}

TEST_CASE("bce and bpr values") {
  std::vector<double> zero{0.0}, big{30.0};
  CHECK(bce_loss(zero, {}).loss == doctest::Approx(std::log(2.0)));
  auto l = bce_loss(big, {});
  CHECK(std::isfinite(l.loss));
  CHECK(l.loss < 1e-12);
  CHECK(bce_loss({}, std::vector<double>{-1000.0}).loss < 1e-12);
  CHECK(bpr_loss(std::vector<double>{0.3}, std::vector<double>{0.3}).loss ==
        doctest::Approx(std::log(2.0)));
  CHECK(bpr_loss(std::vector<double>{30.0}, std::vector<double>{0.0}).loss < 1e-12);
  CHECK(std::isfinite(bpr_loss(std::vector<double>{-800.0}, std::vector<double>{800.0}).loss));
}

TEST_CASE("bce and bpr gradients match central differences") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> pos(5), neg(5);
    for (auto& x : pos) x = n(rng);
    for (auto& x : neg) x = n(rng);
    for (int kind = 0; kind < 2; ++kind) {
      auto f = [&](const std::vector<double>& p, const std::vector<double>& q) {
        return kind == 0 ? bce_loss(p, q) : bpr_loss(p, q);
      };
      auto g = f(pos, neg);
      const double h = 1e-5;
      for (std::size_t k = 0; k < pos.size(); ++k) {
        auto up = pos, down = pos;
        up[k] += h;
        down[k] -= h;
        CHECK(testing::rel_err(g.d_pos[k], (f(up, neg).loss - f(down, neg).loss) / (2 * h)) < 1e-5);
        auto nu = neg, nd = neg;
        nu[k] += h;
        nd[k] -= h;
        CHECK(testing::rel_err(g.d_neg[k], (f(pos, nu).loss - f(pos, nd).loss) / (2 * h)) < 1e-5);
      }
    }
  }
}

TEST_CASE("sample_negatives") {
  std::mt19937_64 rng(1);
  std::vector<std::uint32_t> row{0, 1};
  for (auto i : sample_negatives(row, 3, 50, rng)) CHECK(i == 2u);
  CHECK_THROWS(sample_negatives({0, 1, 2}, 3, 1, rng));

  // Chi-square against uniform over the 8 free items of 10.
  std::vector<std::uint32_t> train{3, 7};
  auto draws = sample_negatives(train, 10, 100000, rng);
  std::map<std::uint32_t, double> counts;
  for (auto i : draws) {
    CHECK_FALSE((i == 3u || i == 7u));
    counts[i] += 1;
  }
  CHECK(counts.size() == 8);
  double chi2 = 0.0;
  const double expected = 100000.0 / 8;
  for (auto [_, c] : counts) chi2 += (c - expected) * (c - expected) / expected;
  CHECK(chi2 < 24.32);  // 7 dof, p = 0.001
}

TEST_CASE("LightGCN propagation: 2-node graph") {
  InteractionSet train(1, 1, {{0}});
  BipartiteGraph g(train, 1);
  Matrix u(1, 2), i(1, 2);
  u(0, 0) = 1.0;
  u(0, 1) = 2.0;
  i(0, 0) = -3.0;
  i(0, 1) = 0.5;
  auto [fu, fi] = lightgcn_propagate(g, u, i);
  CHECK(fu(0, 0) == doctest::Approx((1.0 - 3.0) / 2));
  CHECK(fu(0, 1) == doctest::Approx((2.0 + 0.5) / 2));
  CHECK(fi(0, 0) == doctest::Approx((1.0 - 3.0) / 2));

  BipartiteGraph g0(train, 0);
  auto [bu, bi] = lightgcn_propagate(g0, u, i);
  CHECK(bu == u);
  CHECK(bi == i);
}

TEST_CASE("LightGCN sparse propagation matches dense matrix powers") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t users = 4 + rep % 5, items = 6 + rep % 7;  // <= 20 nodes
    auto train = testing::random_interactions(users, items, 2, rng);
    const std::size_t layers = rep % 4;
    BipartiteGraph g(train, layers);
    // Dense oracle built straight from the definition.
    const std::size_t n = users + items;
    std::vector<double> udeg(users), ideg(items);
    for (std::size_t u = 0; u < users; ++u)
      for (auto i : train.row(u)) {
        udeg[u] += 1;
        ideg[i] += 1;
      }
    Matrix a(n, n);
    for (std::size_t u = 0; u < users; ++u)
      for (auto i : train.row(u)) a(u, users + i) = a(users + i, u) = 1.0 / std::sqrt(udeg[u] * ideg[i]);
    CHECK(g.dense() == a);
    for (std::size_t x = 0; x < n; ++x)
      for (std::size_t y = 0; y < n; ++y) CHECK(g.weight(x, y) == a(y, x));

    Matrix e(n, 3);
    std::normal_distribution<double> nd;
    for (auto& v : e.data()) v = nd(rng);
    Matrix cur = e, acc = e;
    for (std::size_t l = 0; l < layers; ++l) {
      Matrix next(n, 3);
      for (std::size_t x = 0; x < n; ++x)
        for (std::size_t y = 0; y < n; ++y)
          for (std::size_t d = 0; d < 3; ++d) next(x, d) += a(x, y) * cur(y, d);
      cur = next;
      for (std::size_t k = 0; k < acc.size(); ++k) acc.data()[k] += cur.data()[k];
    }
    auto got = g.propagate(e);
    for (std::size_t k = 0; k < acc.size(); ++k)
      CHECK(std::abs(got.data()[k] - acc.data()[k] / static_cast<double>(layers + 1)) <= 1e-6);
  }
}

TEST_CASE("isolated node keeps its scaled base embedding") {
  InteractionSet train(2, 2, {{0}, {}});
  BipartiteGraph g(train, 2);
  Matrix u(2, 1), i(2, 1);
  u(1, 0) = 3.0;
  i(1, 0) = 6.0;
  auto [fu, fi] = lightgcn_propagate(g, u, i);
  CHECK(fu(1, 0) == doctest::Approx(1.0));
  CHECK(fi(1, 0) == doctest::Approx(2.0));
}

TEST_CASE("Adam update rules") {
  SUBCASE("zero gradient without decay leaves parameters unchanged") {
    Parameter p(init_embeddings(3, 4, 1));
    const Matrix before = p.value();
    Adam opt({1e-3, 0.0}, {&p});
    p.add_grad(1, std::vector<double>(4, 0.0));
    opt.step();
    CHECK(p.value() == before);
  }
  SUBCASE("first step with g = 1 moves by about -lr") {
    Parameter p(EmbeddingTable{TableRole::ThetaT1, Matrix(1, 1, 0.5)});
    Adam opt({1e-3, 0.0}, {&p});
    p.add_grad(0, std::vector<double>{1.0});
    opt.step();
    // m_hat = 1, v_hat = 1: delta = -lr / (1 + eps)
    CHECK(p.value()(0, 0) == doctest::Approx(0.5 - 1e-3 / (1.0 + 1e-8)).epsilon(1e-12));
    CHECK(opt.steps() == 1);
  }
  SUBCASE("decay touches only rows in the step") {
    Parameter p(EmbeddingTable{TableRole::ThetaT1, Matrix(2, 1, 1.0)});
    Adam opt({1e-2, 0.5}, {&p});
    p.add_grad(0, std::vector<double>{0.0});
    opt.step();
    CHECK(p.value()(0, 0) < 1.0);
    CHECK(p.value()(1, 0) == 1.0);
  }
  SUBCASE("non-finite gradient names the parameter") {
    Parameter p(init_embeddings(2, 2, 1, TableRole::ItemTarget));
    Adam opt({}, {&p});
    p.add_grad(1, std::vector<double>{NAN, 0.0});
    try {
      opt.step();
      FAIL("expected throw");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("item_target") != std::string::npos);
    }
  }
}

namespace {

void check_backbone_grad(BackboneKind kind, LossKind loss, std::size_t layers, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t users = 3 + seed % 7, items = 4 + seed % 6;
  auto train = testing::random_interactions(users, items, 2, rng);
  BackboneModel m(train, 1 + seed % 8, kind, layers, seed);
  Batch b = testing::random_batch(train, 6, rng);
  m.forward_backward(b, loss, true);
  const double err = gradcheck(m.parameters(), [&] { return m.forward_backward(b, loss, false); });
  CHECK(err < 1e-4);
  for (auto* p : m.parameters()) p->zero_grad();
}

}  // namespace

TEST_CASE("backbone gradients match finite differences") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    check_backbone_grad(BackboneKind::MF, LossKind::BCE, 0, s);
    check_backbone_grad(BackboneKind::MF, LossKind::BPR, 0, s);
    check_backbone_grad(BackboneKind::LightGCN, LossKind::BPR, 2, s);
    check_backbone_grad(BackboneKind::LightGCN, LossKind::BCE, 1, s);
  }
}

TEST_CASE("MF leaves rows outside the batch untouched") {
  std::mt19937_64 rng(3);
  auto train = testing::random_interactions(10, 12, 3, rng);
  BackboneModel m(train, 4, BackboneKind::MF, 0, 1);
  Batch b;
  b.users = {2};
  b.pos = {train.row(2)[0]};
  b.neg = sample_negatives(train.row(2), 12, 1, rng);
  m.forward_backward(b, LossKind::BPR);
  CHECK(m.users().touched_rows() == std::vector<std::uint32_t>{2});
  for (std::size_t u = 0; u < 10; ++u)
    if (u != 2)
      for (double g : m.users().grad().row(u)) CHECK(g == 0.0);
}

TEST_CASE("single-domain training lowers the loss and is deterministic") {
  std::mt19937_64 rng(9);
  auto train = testing::random_interactions(20, 30, 6, rng);
  auto run = [&](std::vector<double>& epoch_means) {
    BackboneModel m(train, 8, BackboneKind::MF, 0, 4);
    Adam opt({0.01, 0.0}, m.parameters());
    InteractionStream stream(train, 2);
    std::mt19937_64 r(1);
    for (int epoch = 0; epoch < 10; ++epoch) {
      stream.reshuffle();
      double sum = 0.0;
      int n = 0;
      for (auto b = stream.next(12); !b.empty(); b = stream.next(12), ++n)
        sum += train_step_single_domain(m, opt, b, train, LossKind::BCE, r).total;
      epoch_means.push_back(sum / n);
    }
    return m.users().value();
  };
  std::vector<double> a, b;
  auto ua = run(a);
  auto ub = run(b);
  CHECK(ua == ub);
  CHECK(a == b);
  for (std::size_t e = 1; e < a.size(); ++e) CHECK(a[e] < a[e - 1]);
}

TEST_CASE("string round trips") {
  for (auto k : {BackboneKind::MF, BackboneKind::LightGCN}) CHECK(backbone_from_string(to_string(k)) == k);
  for (auto k : {LossKind::BCE, LossKind::BPR}) CHECK(loss_from_string(to_string(k)) == k);
  for (int r = 0; r <= static_cast<int>(TableRole::TransformB); ++r)
    CHECK(table_role_from_string(to_string(static_cast<TableRole>(r))) == static_cast<TableRole>(r));
  CHECK_THROWS(backbone_from_string("neumf"));
}
