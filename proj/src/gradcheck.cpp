#include "vkd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "vkd/objectives.hpp"
#include "vkd/rng.hpp"

namespace vkd {

namespace {

// Values bounded away from zero so kinked ops (relu, clamp) never sit within
// a finite-difference step of their kink.
Eigen::ArrayXd away_from_zero(rng::Stream& s, std::int64_t n, double margin = 5e-2) {
  Eigen::ArrayXd v(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const double mag = margin + 1.5 * s.next_uniform();
    v(i) = (s.next_uniform() < 0.5 ? -1.0 : 1.0) * mag;
  }
  return v;
}

Eigen::ArrayXd positive_values(rng::Stream& s, std::int64_t n) {
  Eigen::ArrayXd v(n);
  for (std::int64_t i = 0; i < n; ++i) v(i) = 0.3 + 2.5 * s.next_uniform();
  return v;
}

Shape random_shape(rng::Stream& s) {
  if (s.next_uniform() < 0.4) return Shape{static_cast<std::int64_t>(1 + s.next_below(5))};
  return Shape{static_cast<std::int64_t>(1 + s.next_below(4)),
               static_cast<std::int64_t>(1 + s.next_below(4))};
}

// Random constant the op output is contracted against, so upstream grads are
// non-uniform and transposition bugs cannot cancel.
Tensor probe(rng::Stream& s, const Shape& shape) {
  Eigen::ArrayXd v(shape_size(shape));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = 2.0 * s.next_uniform() - 1.0;
  return Tensor::constant(shape, std::move(v));
}

struct Trial {
  std::vector<Tensor> params;
  std::function<Tensor()> f;
};

Trial unary_trial(rng::Stream& s, const std::function<Tensor(const Tensor&)>& op,
                  bool positive_input = false) {
  Shape shape = random_shape(s);
  Eigen::ArrayXd vals =
      positive_input ? positive_values(s, shape_size(shape)) : away_from_zero(s, shape_size(shape));
  Tensor x = Tensor::parameter(shape, std::move(vals));
  Tensor r = probe(s, shape);
  return Trial{{x}, [x, r, op] { return sum(mul(op(x), r)); }};
}

Trial binary_trial(rng::Stream& s,
                   const std::function<Tensor(const Tensor&, const Tensor&)>& op) {
  Shape shape = random_shape(s);
  Tensor a = Tensor::parameter(shape, away_from_zero(s, shape_size(shape)));
  // Half the rank-2 trials exercise the row-broadcast path.
  Shape bshape = shape;
  if (shape.size() == 2 && s.next_uniform() < 0.5) bshape = Shape{shape[1]};
  Tensor b = Tensor::parameter(bshape, away_from_zero(s, shape_size(bshape)));
  Tensor r = probe(s, shape);
  return Trial{{a, b}, [a, b, r, op] { return sum(mul(op(a, b), r)); }};
}

Trial matmul_trial(rng::Stream& s) {
  const auto m = static_cast<std::int64_t>(1 + s.next_below(4));
  const auto k = static_cast<std::int64_t>(1 + s.next_below(4));
  const auto n = static_cast<std::int64_t>(1 + s.next_below(4));
  const double pick = s.next_uniform();
  if (pick < 0.6) {
    Tensor a = Tensor::parameter({m, k}, away_from_zero(s, m * k));
    Tensor b = Tensor::parameter({k, n}, away_from_zero(s, k * n));
    Tensor r = probe(s, {m, n});
    return Trial{{a, b}, [a, b, r] { return sum(mul(matmul(a, b), r)); }};
  }
  if (pick < 0.8) {
    Tensor a = Tensor::parameter({m, k}, away_from_zero(s, m * k));
    Tensor b = Tensor::parameter({k}, away_from_zero(s, k));
    Tensor r = probe(s, {m});
    return Trial{{a, b}, [a, b, r] { return sum(mul(matmul(a, b), r)); }};
  }
  Tensor a = Tensor::parameter({k}, away_from_zero(s, k));
  Tensor b = Tensor::parameter({k, n}, away_from_zero(s, k * n));
  Tensor r = probe(s, {n});
  return Trial{{a, b}, [a, b, r] { return sum(mul(matmul(a, b), r)); }};
}

Trial concat_trial(rng::Stream& s) {
  const auto n0 = static_cast<std::int64_t>(1 + s.next_below(3));
  const auto n1 = static_cast<std::int64_t>(1 + s.next_below(3));
  const auto c = static_cast<std::int64_t>(1 + s.next_below(3));
  const bool axis0 = s.next_uniform() < 0.5;
  Tensor a = axis0 ? Tensor::parameter({n0, c}, away_from_zero(s, n0 * c))
                   : Tensor::parameter({n0, c}, away_from_zero(s, n0 * c));
  Tensor b = axis0 ? Tensor::parameter({n1, c}, away_from_zero(s, n1 * c))
                   : Tensor::parameter({n0, n1}, away_from_zero(s, n0 * n1));
  Shape out = axis0 ? Shape{n0 + n1, c} : Shape{n0, c + n1};
  Tensor r = probe(s, out);
  const int axis = axis0 ? 0 : 1;
  return Trial{{a, b}, [a, b, r, axis] { return sum(mul(concat(a, b, axis), r)); }};
}

Trial slice_trial(rng::Stream& s) {
  const auto n0 = static_cast<std::int64_t>(2 + s.next_below(3));
  const auto n1 = static_cast<std::int64_t>(2 + s.next_below(3));
  Tensor x = Tensor::parameter({n0, n1}, away_from_zero(s, n0 * n1));
  const int axis = s.next_uniform() < 0.5 ? 0 : 1;
  const auto extent = axis == 0 ? n0 : n1;
  const auto start = static_cast<std::int64_t>(s.next_below(static_cast<std::uint64_t>(extent)));
  const auto len = 1 + static_cast<std::int64_t>(
                           s.next_below(static_cast<std::uint64_t>(extent - start)));
  Shape out = axis == 0 ? Shape{len, n1} : Shape{n0, len};
  Tensor r = probe(s, out);
  return Trial{{x}, [x, r, axis, start, len] { return sum(mul(slice(x, axis, start, len), r)); }};
}

Trial dropout_trial(rng::Stream& s) {
  Shape shape = random_shape(s);
  Tensor x = Tensor::parameter(shape, away_from_zero(s, shape_size(shape)));
  Tensor r = probe(s, shape);
  const double rate = 0.5 * s.next_uniform();
  const std::uint64_t seed = s.next_u64();
  return Trial{{x}, [x, r, rate, seed] { return sum(mul(dropout(x, rate, true, seed), r)); }};
}

using TrialMaker = std::function<Trial(rng::Stream&)>;

struct Family {
  const char* name;
  TrialMaker make;
};

std::vector<Family> families() {
  return {
      {"add", [](rng::Stream& s) { return binary_trial(s, [](auto& a, auto& b) { return add(a, b); }); }},
      {"sub", [](rng::Stream& s) { return binary_trial(s, [](auto& a, auto& b) { return sub(a, b); }); }},
      {"mul", [](rng::Stream& s) { return binary_trial(s, [](auto& a, auto& b) { return mul(a, b); }); }},
      {"matmul", matmul_trial},
      {"relu", [](rng::Stream& s) { return unary_trial(s, [](auto& x) { return relu(x); }); }},
      {"tanh", [](rng::Stream& s) { return unary_trial(s, [](auto& x) { return vkd::tanh(x); }); }},
      {"exp", [](rng::Stream& s) { return unary_trial(s, [](auto& x) { return vkd::exp(x); }); }},
      {"log", [](rng::Stream& s) { return unary_trial(s, [](auto& x) { return vkd::log(x); }, true); }},
      {"softplus", [](rng::Stream& s) { return unary_trial(s, [](auto& x) { return softplus(x); }); }},
      {"sigmoid", [](rng::Stream& s) { return unary_trial(s, [](auto& x) { return sigmoid(x); }); }},
      {"clamp", [](rng::Stream& s) {
         return unary_trial(s, [](auto& x) { return clamp(x, -1.2, 1.2); });
       }},
      {"sum", [](rng::Stream& s) {
         Shape shape = random_shape(s);
         Tensor x = Tensor::parameter(shape, away_from_zero(s, shape_size(shape)));
         return Trial{{x}, [x] { return sum(x); }};
       }},
      {"mean", [](rng::Stream& s) {
         Shape shape = random_shape(s);
         Tensor x = Tensor::parameter(shape, away_from_zero(s, shape_size(shape)));
         return Trial{{x}, [x] { return mean(x); }};
       }},
      {"concat", concat_trial},
      {"slice", slice_trial},
      {"dropout", dropout_trial},
  };
}

}  // namespace

namespace {
// FNV-1a; std::hash is implementation-defined and would break cross-build determinism.
std::uint64_t name_tag(const char* s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (; *s; ++s) h = (h ^ static_cast<unsigned char>(*s)) * 0x100000001b3ull;
  return h;
}
}  // namespace

std::vector<GradCheckResult> gradient_suite(std::uint64_t seed, int trials_per_family) {
  std::vector<GradCheckResult> out;
  for (const Family& fam : families()) {
    rng::Stream s(rng::derive(seed, {name_tag(fam.name)}));
    GradCheckResult res{fam.name, 0.0, trials_per_family};
    for (int t = 0; t < trials_per_family; ++t) {
      Trial trial = fam.make(s);
      res.max_rel_err =
          std::max(res.max_rel_err, finite_difference_check(trial.f, trial.params, kGradCheckStep));
    }
    out.push_back(std::move(res));
  }
  return out;
}

void randomize_parameters(VkdModel& m, std::uint64_t seed, double scale) {
  rng::Stream s(rng::derive(seed, {0x72616e64ull}));
  for (auto& [name, p] : m.parameters()) {
    Eigen::ArrayXd& v = p.mutable_values();
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = scale * s.next_gaussian();
  }
}

GradCheckResult full_objective_gradcheck(std::uint64_t seed) {
  ModelConfig mc;
  mc.input_dim = 8;
  mc.vocab = 12;
  mc.embed_dim = 6;
  mc.feature_dim = 6;
  mc.latent_dim = 4;
  mc.n_classes = 3;
  mc.hidden = {8, 8};
  mc.dropout = 0.5;
  VkdModel model = init_params(mc, seed);
  randomize_parameters(model, seed);

  rng::Stream s(rng::derive(seed, {0x626174ull}));
  const std::int64_t n = 4, seq = 6;
  Eigen::ArrayXd images(n * mc.input_dim);
  for (Eigen::Index i = 0; i < images.size(); ++i) images(i) = s.next_gaussian();
  Eigen::MatrixXi tokens(n, seq);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < seq; ++j)
      tokens(i, j) = static_cast<int>(s.next_below(static_cast<std::uint64_t>(mc.vocab)));
  Eigen::ArrayXd labels(n * mc.n_classes);
  for (Eigen::Index i = 0; i < labels.size(); ++i) labels(i) = s.next_uniform() < 0.5 ? 0.0 : 1.0;

  Batch batch{Tensor::constant({n, mc.input_dim}, std::move(images)), std::move(tokens),
              Tensor::constant({n, mc.n_classes}, std::move(labels))};

  const std::uint64_t noise_seed = rng::derive(seed, {0x65707344ull});
  std::vector<Tensor> params;
  for (auto& [name, p] : model.parameters()) params.push_back(p);

  auto f = [&model, &batch, noise_seed] {
    return vkd_loss(model, batch, 1, 1, 0.7, noise_seed, true).total;
  };
  GradCheckResult res{"full_objective", finite_difference_check(f, params, kGradCheckStep), 1};
  return res;
}

int run_gradcheck(std::ostream& out) {
  bool ok = true;
  auto results = gradient_suite(20260810, 100);
  results.push_back(full_objective_gradcheck(424242));
  for (const GradCheckResult& r : results) {
    const bool pass = r.max_rel_err < kGradCheckTol;
    ok = ok && pass;
    out << (pass ? "ok   " : "FAIL ") << r.family << "  max_rel_err=" << r.max_rel_err
        << "  trials=" << r.trials << "\n";
  }
  out << (ok ? "gradcheck passed" : "gradcheck FAILED") << " (tolerance " << kGradCheckTol
      << ")\n";
  return ok ? 0 : 1;
}

}  // namespace vkd
