#pragma once

// Independent reference computations shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "d2c/datagen.hpp"
#include "d2c/rng.hpp"
#include "d2c/scorer.hpp"
#include "d2c/tensor.hpp"

namespace oracle {

using d2c::Tape;
using d2c::Tensor;

/// Builds a scalar from the given leaves on a fresh tape.
using ScalarFn = std::function<Tensor(Tape&, std::vector<Tensor>&)>;

struct GradCheck {
  double rel_err = 0.0;  ///< ||analytic - numeric|| / (||analytic|| + ||numeric||)
  double max_abs = 0.0;
};

/// Central differences (step h) against reverse mode, in 64-bit mode.
/// Leaves that do not require grad are left alone.
inline GradCheck check_gradients(const ScalarFn& f, std::vector<Tensor> leaves, double h = 1e-5) {
  d2c::PrecisionScope p64(d2c::Precision::f64);
  {
    Tape tape;
    Tensor root = f(tape, leaves);
    for (auto& l : leaves) {
      if (l.requires_grad()) l.zero_grad();
    }
    tape.backward(root);
  }
  double diff2 = 0.0, an2 = 0.0, nu2 = 0.0, max_abs = 0.0;
  for (auto& leaf : leaves) {
    if (!leaf.requires_grad()) continue;
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    auto v = leaf.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + h;
      Tape up(false);
      const double fp = f(up, leaves).item();
      v[i] = saved - h;
      Tape down(false);
      const double fm = f(down, leaves).item();
      v[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      an2 += analytic[i] * analytic[i];
      nu2 += numeric * numeric;
      max_abs = std::max(max_abs, std::abs(analytic[i] - numeric));
    }
  }
  const double denom = std::sqrt(an2) + std::sqrt(nu2);
  return {denom == 0.0 ? 0.0 : std::sqrt(diff2) / denom, max_abs};
}

inline Tensor random_tensor(d2c::Shape shape, d2c::Rng& rng, bool requires_grad = true, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(d2c::shape_numel(shape));
  for (double& x : v) x = lo + (hi - lo) * rng.uniform();
  d2c::PrecisionScope p64(d2c::Precision::f64);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// Average ranks (ties share the mean rank).
inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t q = i; q <= j; ++q) r[idx[q]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n, mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) { return pearson(ranks(a), ranks(b)); }

// ---------------------------------------------------------------------------
// Selection oracles. Each works on (label, score, index) triples directly and
// shares no code with the selector.

struct Item {
  std::uint32_t label;
  std::size_t index;
  double score;
};

/// Every class's chosen indices, classes ascending.
using Picks = std::vector<std::vector<std::size_t>>;

inline std::vector<std::uint32_t> class_list(const std::vector<Item>& items) {
  std::vector<std::uint32_t> ys;
  for (const auto& it : items) ys.push_back(it.label);
  std::sort(ys.begin(), ys.end());
  ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
  return ys;
}

inline std::vector<Item> sorted_class(const std::vector<Item>& items, std::uint32_t y, bool descending) {
  std::vector<Item> c;
  for (const auto& it : items) {
    if (it.label == y) c.push_back(it);
  }
  // Selection sort with an explicit (score, index) key.
  for (std::size_t i = 0; i < c.size(); ++i) {
    std::size_t best = i;
    for (std::size_t j = i + 1; j < c.size(); ++j) {
      const bool better = descending ? (c[j].score > c[best].score || (c[j].score == c[best].score && c[j].index < c[best].index))
                                     : (c[j].score < c[best].score || (c[j].score == c[best].score && c[j].index < c[best].index));
      if (better) best = j;
    }
    std::swap(c[i], c[best]);
  }
  return c;
}

inline Picks interval(const std::vector<Item>& items, std::size_t k, std::size_t m) {
  Picks out;
  for (auto y : class_list(items)) {
    const auto c = sorted_class(items, y, false);
    std::vector<std::size_t> p;
    for (std::size_t pos = 0; p.size() < m; pos += k) p.push_back(c.at(pos).index);
    out.push_back(p);
  }
  return out;
}

inline Picks extreme(const std::vector<Item>& items, bool max, std::size_t m) {
  Picks out;
  for (auto y : class_list(items)) {
    const auto c = sorted_class(items, y, max);
    std::vector<std::size_t> p;
    for (std::size_t i = 0; i < m; ++i) p.push_back(c.at(i).index);
    out.push_back(p);
  }
  return out;
}

/// Greedy herding, evaluating every candidate set mean from scratch.
inline Picks herding(const d2c::LabeledDataset& ds, std::size_t m) {
  Picks out;
  for (std::uint32_t y = 0; y < ds.class_count; ++y) {
    const auto members = ds.class_indices(y);
    std::vector<double> mu(ds.dim, 0.0);
    for (auto i : members) {
      for (std::size_t d = 0; d < ds.dim; ++d) mu[d] += ds.sample(i)[d];
    }
    for (double& v : mu) v /= static_cast<double>(members.size());
    std::vector<std::size_t> chosen;
    while (chosen.size() < m) {
      std::vector<std::pair<double, std::size_t>> cand;
      for (auto c : members) {
        if (std::find(chosen.begin(), chosen.end(), c) != chosen.end()) continue;
        std::vector<double> s(ds.dim, 0.0);
        for (auto q : chosen) {
          for (std::size_t d = 0; d < ds.dim; ++d) s[d] += ds.sample(q)[d];
        }
        double e = 0.0;
        for (std::size_t d = 0; d < ds.dim; ++d) {
          const double r = mu[d] - (s[d] + ds.sample(c)[d]) / static_cast<double>(chosen.size() + 1);
          e += r * r;
        }
        cand.push_back({e, c});
      }
      chosen.push_back(std::min_element(cand.begin(), cand.end())->second);
    }
    out.push_back(chosen);
  }
  return out;
}

/// Farthest-point traversal recomputing every min-distance at each step.
inline Picks kcenter(const d2c::LabeledDataset& ds, std::size_t m) {
  auto dist2 = [&](std::size_t a, const std::vector<double>& b) {
    double e = 0.0;
    for (std::size_t d = 0; d < ds.dim; ++d) e += (ds.sample(a)[d] - b[d]) * (ds.sample(a)[d] - b[d]);
    return e;
  };
  Picks out;
  for (std::uint32_t y = 0; y < ds.class_count; ++y) {
    const auto members = ds.class_indices(y);
    std::vector<double> mu(ds.dim, 0.0);
    for (auto i : members) {
      for (std::size_t d = 0; d < ds.dim; ++d) mu[d] += ds.sample(i)[d];
    }
    for (double& v : mu) v /= static_cast<double>(members.size());
    std::vector<std::pair<double, std::size_t>> seed;
    for (auto c : members) seed.push_back({dist2(c, mu), c});
    std::vector<std::size_t> chosen{std::min_element(seed.begin(), seed.end())->second};
    while (chosen.size() < m) {
      std::vector<std::pair<double, std::size_t>> cand;
      for (auto c : members) {
        if (std::find(chosen.begin(), chosen.end(), c) != chosen.end()) continue;
        double near = INFINITY;
        for (auto q : chosen) {
          const auto s = ds.sample(q);
          near = std::min(near, dist2(c, std::vector<double>(s.begin(), s.end())));
        }
        // Largest distance first, then smallest index.
        cand.push_back({-near, c});
      }
      chosen.push_back(std::min_element(cand.begin(), cand.end())->second);
    }
    out.push_back(chosen);
  }
  return out;
}

}  // namespace oracle
