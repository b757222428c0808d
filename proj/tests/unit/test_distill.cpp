#include <doctest.h>

#include <cmath>
#include <functional>
#include <sstream>

#include "oracles.hpp"
#include "sparsekit/distill.hpp"

using namespace sparsekit;

namespace {

TokenBatch make_batch(std::size_t b, std::size_t s, std::size_t vocab, Rng& rng, std::size_t padded = 0) {
  TokenBatch t;
  t.batch = b;
  t.seq = s;
  t.targets.resize(b * s);
  t.padding.assign(b * s, 0);
  for (auto& y : t.targets) y = static_cast<std::int32_t>(rng.below(vocab));
  // pad from the tail of each sequence, never the first token
  for (std::size_t k = 0; k < padded; ++k) t.padding[(k % b) * s + (s - 1 - k / b)] = 1;
  return t;
}

std::vector<double> randn(std::size_t n, Rng& rng, double sigma = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = sigma * rng.gaussian();
  return v;
}

// Central differences of f at x, compared with the analytic gradient on a
// sample of coordinates. Returns the worst relative error.
double fd_check(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                const std::vector<double>& grad, Rng& rng, std::size_t points, double h = 1e-3) {
  double worst = 0.0;
  for (std::size_t p = 0; p < points; ++p) {
    const std::size_t i = rng.below(x.size());
    const double x0 = x[i];
    x[i] = x0 + h;
    const double up = f(x);
    x[i] = x0 - h;
    const double down = f(x);
    x[i] = x0;
    const double num = (up - down) / (2 * h);
    const double err = std::fabs(num - grad[i]) / std::max({std::fabs(num), std::fabs(grad[i]), 1e-6});
    worst = std::max(worst, err);
  }
  return worst;
}

double naive_ce(const std::vector<double>& z, std::size_t vocab, const TokenBatch& t) {
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < t.tokens(); ++i) {
    if (t.padded(i)) continue;
    const auto lp = oracle::log_softmax(z.data() + i * vocab, vocab);
    sum -= lp[static_cast<std::size_t>(t.targets[i])];
    ++n;
  }
  return sum / n;
}

double naive_kl(const std::vector<double>& zt, const std::vector<double>& zs, std::size_t vocab, const TokenBatch& t,
                double temp = 1.0) {
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < t.tokens(); ++i) {
    if (t.padded(i)) continue;
    std::vector<double> a(vocab), b(vocab);
    for (std::size_t v = 0; v < vocab; ++v) {
      a[v] = zt[i * vocab + v] / temp;
      b[v] = zs[i * vocab + v] / temp;
    }
    const auto lt = oracle::log_softmax(a.data(), vocab), ls = oracle::log_softmax(b.data(), vocab);
    for (std::size_t v = 0; v < vocab; ++v) sum += std::exp(lt[v]) * (lt[v] - ls[v]);
    ++n;
  }
  return sum / n;
}

double naive_sq(const std::vector<double>& ft, const std::vector<double>& fs, std::size_t d, const TokenBatch& t) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < t.tokens(); ++i) {
    if (t.padded(i)) continue;
    for (std::size_t k = 0; k < d; ++k) {
      num += (ft[i * d + k] - fs[i * d + k]) * (ft[i * d + k] - fs[i * d + k]);
      den += ft[i * d + k] * ft[i * d + k];
    }
  }
  return num / den;
}

}  // namespace

TEST_CASE("task_loss examples") {
  Rng rng(1);
  auto t = make_batch(1, 3, 4, rng);
  std::vector<double> z(12, 0.0);
  CHECK(task_loss<double>(z, 4, t).loss == doctest::Approx(std::log(4.0)));
  for (std::size_t i = 0; i < 3; ++i) z[i * 4 + static_cast<std::size_t>(t.targets[i])] = 1000.0;
  CHECK(task_loss<double>(z, 4, t).loss == doctest::Approx(0.0));

  const auto b = make_batch(2, 3, 5, rng, 1);
  const auto zz = randn(30, rng);
  CHECK(task_loss<double>(zz, 5, b).loss == doctest::Approx(naive_ce(zz, 5, b)).epsilon(1e-6));
  const std::vector<float> zf(zz.begin(), zz.end());
  CHECK(task_loss<float>(zf, 5, b).loss == doctest::Approx(naive_ce(zz, 5, b)).epsilon(1e-6));
}

TEST_CASE("logit_kd_loss examples") {
  TokenBatch t;
  t.batch = t.seq = 1;
  t.targets = {0};
  t.padding = {0};
  const std::vector<double> teacher{std::log(0.75), std::log(0.25)};
  const std::vector<double> student{0.0, 0.0};
  const double want = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
  CHECK(logit_kd_loss<double>(teacher, student, 2, t).loss == doctest::Approx(want).epsilon(1e-9));
  CHECK(want == doctest::Approx(0.13081).epsilon(1e-4));
  CHECK(logit_kd_loss<double>(teacher, teacher, 2, t).loss == 0.0);
}

TEST_CASE("logit_kd_loss against the naive loop, and KL >= 0") {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t vocab = 2 + rng.below(10);
    const auto t = make_batch(2, 4, vocab, rng, rng.below(4));
    const auto zt = randn(8 * vocab, rng, 3.0), zs = randn(8 * vocab, rng, 3.0);
    const double temp = trial % 2 ? 1.0 : 2.5;
    const double kl = logit_kd_loss<double>(zt, zs, vocab, t, temp).loss;
    REQUIRE(kl >= 0.0);
    REQUIRE(kl == doctest::Approx(naive_kl(zt, zs, vocab, t, temp)).epsilon(1e-9));
  }
}

TEST_CASE("squarehead_layer_loss examples") {
  Rng rng(6);
  const auto t = make_batch(2, 4, 3, rng, 3);
  const auto ft = randn(2 * 4 * 8, rng), fs = randn(2 * 4 * 8, rng);
  CHECK(squarehead_layer_loss<double>(ft, ft, 8, t).loss == 0.0);
  CHECK(squarehead_layer_loss<double>(ft, std::vector<double>(64, 0.0), 8, t).loss ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(squarehead_layer_loss<double>(ft, fs, 8, t).loss == doctest::Approx(naive_sq(ft, fs, 8, t)).epsilon(1e-9));
  const std::vector<float> ftf(ft.begin(), ft.end()), fsf(fs.begin(), fs.end());
  CHECK(squarehead_layer_loss<float>(ftf, fsf, 8, t).loss == doctest::Approx(naive_sq(ft, fs, 8, t)).epsilon(1e-6));
}

TEST_CASE("squarehead invariances") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto t = make_batch(3, 5, 3, rng, 4);
    auto ft = randn(15 * 6, rng), fs = randn(15 * 6, rng);
    const double base = squarehead_layer_loss<double>(ft, fs, 6, t).loss;
    // padding perturbation: exact
    for (std::size_t i = 0; i < t.tokens(); ++i) {
      if (!t.padded(i)) continue;
      for (std::size_t k = 0; k < 6; ++k) {
        ft[i * 6 + k] += 100.0 * rng.gaussian();
        fs[i * 6 + k] -= 50.0;
      }
    }
    CHECK(squarehead_layer_loss<double>(ft, fs, 6, t).loss == base);
    // common scale
    for (double c : {-3.0, 0.01, 7.5}) {
      auto a = ft, b = fs;
      for (auto& v : a) v *= c;
      for (auto& v : b) v *= c;
      CHECK(std::fabs(squarehead_layer_loss<double>(a, b, 6, t).loss - base) <= 1e-7 * std::max(1.0, base));
    }
  }
}

TEST_CASE("squarehead rejects a zero teacher") {
  Rng rng(2);
  const auto t = make_batch(1, 4, 3, rng, 1);
  std::vector<double> ft(16, 0.0);
  ft[3 * 4] = 5.0;  // only the padded token is nonzero
  CHECK_THROWS_AS(squarehead_layer_loss<double>(ft, randn(16, rng), 4, t), DegenerateTeacher);
}

TEST_CASE("squarehead_total") {
  CHECK(squarehead_total(std::vector<double>{0, 0, 0}) == 0.0);
  CHECK(squarehead_total(std::vector<double>{1.0}) == 1.0);
  CHECK(squarehead_total(std::vector<double>{0.2, 0.5, 0.3}) == doctest::Approx(1.0));
}

TEST_CASE("predictive_entropy") {
  Rng rng(3);
  auto t = make_batch(1, 2, 10, rng);
  CHECK(predictive_entropy<double>(std::vector<double>(20, 0.0), 10, t) == doctest::Approx(std::log(10.0)));
  std::vector<double> onehot(20, -1e4);
  onehot[3] = onehot[15] = 0.0;
  CHECK(predictive_entropy<double>(onehot, 10, t) == doctest::Approx(0.0));
  auto t1 = make_batch(1, 1, 3, rng);
  const std::vector<double> z{std::log(0.5), std::log(0.25), std::log(0.25)};
  CHECK(predictive_entropy<double>(z, 3, t1) == doctest::Approx(1.5 * std::log(2.0)).epsilon(1e-12));
  for (int trial = 0; trial < 100; ++trial) {
    const auto b = make_batch(2, 3, 7, rng, 2);
    const double h = predictive_entropy<double>(randn(42, rng, 4.0), 7, b);
    CHECK(h >= 0.0);
    CHECK(h <= std::log(7.0) + 1e-12);
  }
}

TEST_CASE("TokenBatch validation") {
  Rng rng(1);
  auto t = make_batch(2, 3, 4, rng);
  CHECK_NOTHROW(t.validate(4));
  t.targets[0] = 4;
  CHECK_THROWS_AS(t.validate(4), InvalidArgument);
  auto all_pad = make_batch(1, 2, 4, rng);
  all_pad.padding = {1, 1};
  CHECK_THROWS_AS(all_pad.validate(4), InvalidArgument);
  CHECK_THROWS_AS(task_loss<double>(std::vector<double>(7, 0.0), 4, make_batch(2, 1, 4, rng)), DimensionError);
}

TEST_CASE("loss gradients match central finite differences") {
  Rng rng(2024);
  constexpr std::size_t kPoints = 25;
  for (int trial = 0; trial < 4; ++trial) {
    const std::size_t vocab = 6, b = 2, s = 4, d = 5;
    const auto t = make_batch(b, s, vocab, rng, 2);
    const auto zs = randn(b * s * vocab, rng, 2.0), zt = randn(b * s * vocab, rng, 2.0);
    const auto fs = randn(b * s * d, rng), ft = randn(b * s * d, rng);

    const auto ce = task_loss<double>(zs, vocab, t);
    CHECK(fd_check([&](const auto& x) { return task_loss<double>(x, vocab, t).loss; }, zs, ce.grad, rng, kPoints) <
          1e-4);

    for (double temp : {1.0, 2.0}) {
      const auto kd = logit_kd_loss<double>(zt, zs, vocab, t, temp);
      CHECK(fd_check([&](const auto& x) { return logit_kd_loss<double>(zt, x, vocab, t, temp).loss; }, zs, kd.grad,
                     rng, kPoints) < 1e-4);
    }

    const auto sq = squarehead_layer_loss<double>(ft, fs, d, t);
    CHECK(fd_check([&](const auto& x) { return squarehead_layer_loss<double>(ft, x, d, t).loss; }, fs, sq.grad, rng,
                   kPoints) < 1e-4);
    // padded positions get exactly zero gradient
    for (std::size_t i = 0; i < t.tokens(); ++i) {
      if (!t.padded(i)) continue;
      for (std::size_t k = 0; k < d; ++k) CHECK(sq.grad[i * d + k] == 0.0);
      for (std::size_t v = 0; v < vocab; ++v) CHECK(ce.grad[i * vocab + v] == 0.0);
    }
  }
}

TEST_CASE("combined variants: values and gradients") {
  Rng rng(99);
  const std::size_t vocab = 5, b = 2, s = 3, d = 4, layers = 2;
  for (int trial = 0; trial < 10; ++trial) {
    const auto t = make_batch(b, s, vocab, rng, 1);
    const auto zs = randn(b * s * vocab, rng), zt = randn(b * s * vocab, rng);
    FeatureMaps<double> fs{d, {randn(b * s * d, rng), randn(b * s * d, rng)}};
    FeatureMaps<double> ft{d, {randn(b * s * d, rng), randn(b * s * d, rng)}};
    const double lambda = 0.5 + rng.uniform01();

    for (auto variant : {LossVariant::cross_entropy, LossVariant::standard_kd, LossVariant::squarehead,
                         LossVariant::kd_squarehead}) {
      LossInputs<double> in;
      in.vocab = vocab;
      in.batch = &t;
      in.student_logits = zs;
      in.student_features = &fs;
      in.teacher_logits = zt;
      in.teacher_features = &ft;
      const auto out = compute_loss<double>(variant, in, lambda);

      // value from the components
      const double ce = naive_ce(zs, vocab, t);
      const double kl = naive_kl(zt, zs, vocab, t);
      double feat = 0;
      for (std::size_t l = 0; l < layers; ++l) feat += naive_sq(ft.layers[l], fs.layers[l], d, t);
      double want = ce;
      if (needs_teacher_logits(variant)) want += lambda * kl;
      if (needs_teacher_features(variant)) want += lambda * feat;
      CHECK(out.total == doctest::Approx(want).epsilon(1e-9));

      // gradient w.r.t. logits and each feature map
      auto total_at = [&](const std::vector<double>& z, std::size_t layer, const std::vector<double>* f) {
        FeatureMaps<double> fs2 = fs;
        if (f != nullptr) fs2.layers[layer] = *f;
        LossInputs<double> in2 = in;
        in2.student_logits = z;
        in2.student_features = &fs2;
        return compute_loss<double>(variant, in2, lambda).total;
      };
      CHECK(fd_check([&](const auto& x) { return total_at(x, 0, nullptr); }, zs, out.grad_logits, rng, 20) < 1e-4);
      if (needs_teacher_features(variant)) {
        REQUIRE(out.grad_features.size() == layers);
        for (std::size_t l = 0; l < layers; ++l) {
          CHECK(fd_check([&](const auto& x) { return total_at(zs, l, &x); }, fs.layers[l], out.grad_features[l], rng,
                         20) < 1e-4);
        }
      } else {
        CHECK(out.grad_features.empty());
      }
    }
  }
}

TEST_CASE("combine and variant names") {
  CHECK(combine(LossVariant::squarehead, 0.4, std::nullopt, 0.6, 1.0) == doctest::Approx(1.0));
  CHECK(combine(LossVariant::standard_kd, 0.4, 0.9, std::nullopt, 0.0) == 0.4);
  CHECK_THROWS_AS(combine(LossVariant::standard_kd, 0.4, std::nullopt, std::nullopt, 1.0), InvalidArgument);
  for (auto v : {LossVariant::cross_entropy, LossVariant::standard_kd, LossVariant::squarehead,
                 LossVariant::kd_squarehead}) {
    CHECK(parse_loss_variant(to_string(v)) == v);
  }
  CHECK_THROWS_AS(parse_loss_variant("mse"), InvalidArgument);
}

TEST_CASE("standard KD with lambda 0 equals CE") {
  Rng rng(4);
  const auto t = make_batch(2, 3, 4, rng);
  const auto zs = randn(24, rng), zt = randn(24, rng);
  LossInputs<double> in;
  in.vocab = 4;
  in.batch = &t;
  in.student_logits = zs;
  in.teacher_logits = zt;
  const auto kd = compute_loss<double>(LossVariant::standard_kd, in, 0.0);
  const auto ce = compute_loss<double>(LossVariant::cross_entropy, in, 0.0);
  CHECK(kd.total == ce.total);
  CHECK(kd.grad_logits == ce.grad_logits);
}

TEST_CASE("loss CSV row") {
  LossBreakdown<float> b;
  b.variant = LossVariant::squarehead;
  b.task = 0.5f;
  b.feat_total = 0.25f;
  b.total = 0.75f;
  std::ostringstream s;
  write_loss_csv_row(s, 7, b, 1.5);
  CHECK(s.str() == "7,squarehead,0.5,0,0.25,0.75,1.5\n");
}
