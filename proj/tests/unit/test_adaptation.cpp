#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "lpaint/adaptation.hpp"
#include "lpaint/archive.hpp"
#include "lpaint/error.hpp"
#include "oracles.hpp"

using namespace lpaint;

namespace {

struct Problem {
  LayeredGenerator g;
  LatentCode z;
  Tensor z_h;
  Tensor target;
  BinaryMask mask;

  explicit Problem(std::uint64_t seed) : g(oracle::micro_generator(seed)) {
    std::mt19937_64 rng(seed + 100);
    z = {oracle::random_tensor(g.latent_shape().shape(), rng), 0};
    z_h = g.run(0, g.split(), z.values);
    target = oracle::random_tensor(g.output_shape().shape(), rng, -2.0f, 2.0f);
    mask = oracle::random_mask(4, 4, 0.3, rng);
  }
};

std::vector<std::vector<double>> as_double(const PerturbationSet& p) {
  std::vector<std::vector<double>> out;
  for (const Tensor& d : p.deltas) out.emplace_back(d.values().begin(), d.values().end());
  return out;
}

}  // namespace

TEST_SUITE("adaptation") {
  TEST_CASE("match loss is the mean over unmasked entries") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 20; ++i) {
      const Tensor a = oracle::random_tensor({3, 5, 6}, rng), b = oracle::random_tensor({3, 5, 6}, rng);
      const BinaryMask m = oracle::random_mask(5, 6, 0.4, rng);
      double sum = 0.0;
      int n = 0;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 5; ++y)
          for (std::size_t x = 0; x < 6; ++x)
            if (!m.at(y, x)) {
              sum += std::abs(static_cast<double>(a.at(c, y, x)) - b.at(c, y, x));
              ++n;
            }
      CHECK(match_loss(a, b, m) == doctest::Approx(n ? sum / n : 0.0).epsilon(1e-6));
    }
    BinaryMask all(5, 6);
    all.bits.assign(30, 1);
    CHECK(match_loss(Tensor({3, 5, 6}), Tensor({3, 5, 6}, 1.0f), all) == 0.0);
    CHECK_THROWS_AS(match_loss(Tensor({3, 5, 6}), Tensor({3, 5, 6}), BinaryMask(4, 6)), ShapeError);
  }

  TEST_CASE("one delta per fine layer except the last") {
    const LayeredGenerator g = make_toy_generator();
    const PerturbationSet p = make_perturbations(g, {});
    CHECK(p.first_layer == 1);
    REQUIRE(p.deltas.size() == 4);
    for (std::size_t k = 0; k < 4; ++k) CHECK(p.deltas[k].shape() == g.boundary_shape(k + 2).shape());
    for (const Tensor& d : p.deltas) CHECK(std::all_of(d.values().begin(), d.values().end(), [](float v) { return v == 0.0f; }));
  }

  TEST_CASE("objective matches the double-precision oracle") {
    for (auto mode : {PerturbationMode::multiplicative, PerturbationMode::additive}) {
      const Problem pr(3);
      AdaptationConfig cfg;
      cfg.mode = mode;
      cfg.random_init = true;
      cfg.init_scale = 0.3f;
      const PerturbationSet p = make_perturbations(pr.g, cfg);
      const double got = adaptation_objective(pr.g, pr.z_h, pr.target, pr.mask, p, 0.05f);
      const double want = oracle::adaptation_loss(pr.g, pr.z_h, pr.target, pr.mask, p, 0.05, as_double(p));
      CHECK(got == doctest::Approx(want).epsilon(1e-5));
    }
  }

  TEST_CASE("delta gradient matches finite differences of the oracle") {
    for (auto mode : {PerturbationMode::multiplicative, PerturbationMode::additive}) {
      for (std::uint64_t seed : {5u, 6u, 7u}) {
        const Problem pr(seed);
        AdaptationConfig cfg;
        cfg.mode = mode;
        cfg.random_init = true;
        cfg.init_scale = 0.2f;
        cfg.seed = seed;
        const PerturbationSet p = make_perturbations(pr.g, cfg);
        std::vector<Tensor> grads;
        adaptation_objective(pr.g, pr.z_h, pr.target, pr.mask, p, 0.1f, &grads);
        REQUIRE(grads.size() == 1);
        std::mt19937_64 rng(seed);
        for (int k = 0; k < 8; ++k) {
          const std::size_t i = rng() % p.deltas[0].size();
          auto d = as_double(p);
          const double h = 1e-6;
          d[0][i] += h;
          const double up = oracle::adaptation_loss(pr.g, pr.z_h, pr.target, pr.mask, p, 0.1, d);
          d[0][i] -= 2 * h;
          const double down = oracle::adaptation_loss(pr.g, pr.z_h, pr.target, pr.mask, p, 0.1, d);
          const double fd = (up - down) / (2 * h);
          const double an = grads[0][i];
          CHECK(std::abs(an - fd) <= 1e-3 * std::max(std::abs(fd), 1e-3));
        }
      }
    }
  }

  TEST_CASE("zero steps give the unadapted generator") {
    const Problem pr(8);
    AdaptationConfig cfg;
    cfg.steps = 0;
    const AdaptedGenerator a = optimize_adaptation(pr.g, pr.z, pr.target, pr.mask, cfg);
    CHECK(render(a, pr.z) == pr.g.forward(pr.z));
    CHECK(a.loss_trace.size() == 1);
    CHECK(a.best_step == 0);
  }

  TEST_CASE("optimization keeps the best iterate and reduces the loss") {
    const Problem pr(9);
    AdaptationConfig cfg;
    cfg.steps = 60;
    cfg.lambda_reg = 1e-3f;
    const AdaptedGenerator a = optimize_adaptation(pr.g, pr.z, pr.target, pr.mask, cfg);
    REQUIRE(a.loss_trace.size() == 61);
    const auto best = std::min_element(a.loss_trace.begin(), a.loss_trace.end());
    CHECK(static_cast<std::size_t>(best - a.loss_trace.begin()) == a.best_step);
    CHECK(*best < a.loss_trace.front());
    const double refit = adaptation_objective(pr.g, pr.z_h, pr.target, pr.mask, a.perturbations, cfg.lambda_reg);
    CHECK(refit == doctest::Approx(*best).epsilon(1e-9));
    CHECK(render(a, pr.z) == render(a, LatentCode{pr.z_h, pr.g.split()}));
  }

  TEST_CASE("seeded random init is reproducible") {
    const Problem pr(10);
    AdaptationConfig cfg;
    cfg.steps = 5;
    cfg.random_init = true;
    cfg.seed = 42;
    const AdaptedGenerator a = optimize_adaptation(pr.g, pr.z, pr.target, pr.mask, cfg);
    const AdaptedGenerator b = optimize_adaptation(pr.g, pr.z, pr.target, pr.mask, cfg);
    CHECK(a.perturbations.deltas == b.perturbations.deltas);
    CHECK(a.loss_trace == b.loss_trace);
  }

  TEST_CASE("cancellation and divergence") {
    const Problem pr(11);
    AdaptationConfig cfg;
    cfg.steps = 50;
    std::size_t seen = 0;
    cfg.cancelled = [&](std::size_t step) {
      seen = step;
      return step == 3;
    };
    CHECK_THROWS_AS(optimize_adaptation(pr.g, pr.z, pr.target, pr.mask, cfg), CancelledError);
    CHECK(seen == 3);

    Tensor bad = pr.target;
    bad[0] = std::numeric_limits<float>::quiet_NaN();
    BinaryMask open(4, 4);
    CHECK_THROWS_AS(optimize_adaptation(pr.g, pr.z, bad, open, AdaptationConfig{}), NumericalError);
    CHECK_THROWS_AS(optimize_adaptation(pr.g, pr.z, pr.target, BinaryMask(3, 4), AdaptationConfig{}), ShapeError);
    const LatentCode wrong{pr.target, 3};
    CHECK_THROWS_AS(optimize_adaptation(pr.g, wrong, pr.target, pr.mask, AdaptationConfig{}), ShapeError);
  }

  TEST_CASE("progress reports every step") {
    const Problem pr(12);
    AdaptationConfig cfg;
    cfg.steps = 7;
    std::vector<std::size_t> steps;
    cfg.progress = [&](std::size_t s, double) { steps.push_back(s); };
    optimize_adaptation(pr.g, pr.z, pr.target, pr.mask, cfg);
    CHECK(steps == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6});
  }

  TEST_CASE("adapted archive is bound to checkpoint and inputs") {
    const Problem pr(13);
    AdaptationConfig cfg;
    cfg.steps = 10;
    const AdaptedGenerator a = optimize_adaptation(pr.g, pr.z, pr.target, pr.mask, cfg);
    const Archive arc = a.to_archive();
    const AdaptedGenerator b = AdaptedGenerator::from_archive(arc, pr.g);
    CHECK(render(b, b.z_e) == render(a, pr.z));
    CHECK(b.loss_trace == a.loss_trace);
    CHECK_THROWS_AS(AdaptedGenerator::from_archive(arc, oracle::micro_generator(99)), ValidationError);
    Archive tampered = arc;
    tampered.meta["target_digest"] = "00";
    CHECK_THROWS_AS(AdaptedGenerator::from_archive(tampered, pr.g), ValidationError);
    Archive foreign = arc;
    foreign.meta["format"] = "something";
    CHECK_THROWS_AS(AdaptedGenerator::from_archive(foreign, pr.g), VersionError);
  }

  TEST_CASE("preview fitting lowers the full-image loss and leaves coarse layers alone") {
    const Problem pr(14);
    const WeightAdaptedGenerator w = fit_preview_generator(pr.g, pr.z, pr.target, {50, 1e-2f});
    REQUIRE(w.loss_trace.size() == 51);
    CHECK(w.loss_trace.back() < w.loss_trace.front());
    CHECK(w.generator.layer(0).weight == pr.g.layer(0).weight);
    CHECK_FALSE(w.generator.layer(2).weight == pr.g.layer(2).weight);
  }

  TEST_CASE("loss trace csv") {
    CHECK(loss_trace_csv({1.5, 0.25}) == "step,loss\n0,1.5\n1,0.25\n");
  }
}
