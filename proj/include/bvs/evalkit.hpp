#pragma once

// Token-level evaluation metrics: WER and its paired difference, Frechet
// distance over embedded sets, a paired per-frame distance, and onset desync.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bvs/errors.hpp"
#include "bvs/random.hpp"
#include "bvs/tokenspace.hpp"

namespace bvs::eval {

using Vec = Eigen::VectorXd;
using Matd = Eigen::MatrixXd;

struct WerResult {
  double value = 0.0;
  std::size_t distance = 0;
  bool empty_reference = false;  // value is hypothesis length over 1
};

template <typename T>
std::size_t levenshtein(const std::vector<T>& a, const std::vector<T>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline WerResult wer_detail(const std::vector<std::uint32_t>& reference, const std::vector<std::uint32_t>& hypothesis) {
  WerResult r;
  r.distance = levenshtein(reference, hypothesis);
  r.empty_reference = reference.empty();
  r.value = static_cast<double>(r.distance) / static_cast<double>(std::max<std::size_t>(1, reference.size()));
  return r;
}

inline double wer(const std::vector<std::uint32_t>& reference, const std::vector<std::uint32_t>& hypothesis) {
  return wer_detail(reference, hypothesis).value;
}

/// Mean over pairs of |wer_gt - wer_pred|.
inline double delta_wer(const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.empty()) throw DomainError("delta_wer: needs at least one pair");
  double s = 0.0;
  for (const auto& [a, b] : pairs) s += std::abs(a - b);
  return s / static_cast<double>(pairs.size());
}

namespace detail {

inline void check_finite_symmetric(const Matd& c, const char* what) {
  if (!c.allFinite()) throw NumericError(std::string("frechet_distance: ") + what + " has non-finite entries");
  const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
  if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
    throw NumericError(std::string("frechet_distance: ") + what + " is not symmetric");
}

inline Matd psd_sqrt(const Matd& c) {
  Eigen::SelfAdjointEigenSolver<Matd> es(c);
  if (es.info() != Eigen::Success) throw NumericError("frechet_distance: eigendecomposition failed");
  const Vec root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// |mu1 - mu2|^2 + tr(C1 + C2 - 2 (C1 C2)^(1/2)). The trace of the cross term
/// is taken as tr((sqrt(C1) C2 sqrt(C1))^(1/2)), which is symmetric PSD.
inline double frechet_distance(const Vec& mu1, const Matd& cov1, const Vec& mu2, const Matd& cov2) {
  const auto d = mu1.size();
  if (mu2.size() != d || cov1.rows() != d || cov1.cols() != d || cov2.rows() != d || cov2.cols() != d)
    throw ShapeError("frechet_distance: dimensions differ");
  if (!mu1.allFinite() || !mu2.allFinite()) throw NumericError("frechet_distance: non-finite mean");
  detail::check_finite_symmetric(cov1, "cov1");
  detail::check_finite_symmetric(cov2, "cov2");
  const Matd s1 = detail::psd_sqrt(cov1);
  Matd inner = s1 * cov2 * s1;
  inner = 0.5 * (inner + inner.transpose());
  const double cross = detail::psd_sqrt(inner).trace();
  const double value = (mu1 - mu2).squaredNorm() + cov1.trace() + cov2.trace() - 2.0 * cross;
  return std::max(0.0, value);
}

/// Sequence-level embedder: normalized token histogram times a seeded
/// Gaussian projection.
struct SetEmbedder {
  std::string id;
  Matd projection;  // vocab x dim

  static SetEmbedder histogram_projection(std::size_t vocab, std::size_t dim = 16, std::uint64_t seed = 17) {
    SetEmbedder e;
    e.id = "hist-proj-" + std::to_string(dim) + "-seed" + std::to_string(seed);
    Rng rng(derive_seed(seed, 0x5e7));
    e.projection.resize(static_cast<Eigen::Index>(vocab), static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < e.projection.rows(); ++i)
      for (Eigen::Index j = 0; j < e.projection.cols(); ++j) e.projection(i, j) = normal01(rng);
    return e;
  }

  std::size_t dim() const { return static_cast<std::size_t>(projection.cols()); }

  Vec embed(const TokenSeq& seq) const {
    Vec hist = Vec::Zero(projection.rows());
    for (auto t : seq) {
      if (t >= static_cast<TokenId>(projection.rows()))
        throw RangeError("embedder: token " + std::to_string(t) + " outside vocabulary of " +
                         std::to_string(projection.rows()));
      hist[t] += 1.0;
    }
    if (!seq.empty()) hist /= static_cast<double>(seq.size());
    return projection.transpose() * hist;
  }
};

struct GaussianFit {
  Vec mean;
  Matd cov;
};

/// Mean and unbiased covariance of the embedded set. Without shrinkage the
/// set must have at least dim + 1 members.
inline GaussianFit fit_gaussian(const std::vector<TokenSeq>& set, const SetEmbedder& e, double shrinkage = 0.0) {
  const auto d = static_cast<Eigen::Index>(e.dim());
  if (set.size() < 2 || (shrinkage <= 0.0 && set.size() < e.dim() + 1))
    throw DomainError("fad: set of " + std::to_string(set.size()) + " sequences is too small for a " +
                      std::to_string(d) + "-dim covariance (enable shrinkage for small sets)");
  Matd x(static_cast<Eigen::Index>(set.size()), d);
  for (std::size_t i = 0; i < set.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = e.embed(set[i]).transpose();
  GaussianFit g;
  g.mean = x.colwise().mean().transpose();
  const Matd centered = x.rowwise() - g.mean.transpose();
  g.cov = centered.transpose() * centered / static_cast<double>(set.size() - 1);
  g.cov = 0.5 * (g.cov + g.cov.transpose());
  if (shrinkage > 0.0) g.cov.diagonal().array() += shrinkage;
  return g;
}

inline double fad(const std::vector<TokenSeq>& a, const std::vector<TokenSeq>& b, const SetEmbedder& e,
                  double shrinkage = 0.0) {
  const auto ga = fit_gaussian(a, e, shrinkage);
  const auto gb = fit_gaussian(b, e, shrinkage);
  return frechet_distance(ga.mean, ga.cov, gb.mean, gb.cov);
}

/// Per-frame embedder: one row of a table per token id.
struct FrameEmbedder {
  std::string id;
  Matd table;  // vocab x dim

  static FrameEmbedder lookup(std::size_t vocab, std::size_t dim = 16, std::uint64_t seed = 29) {
    FrameEmbedder e;
    e.id = "frame-lookup-" + std::to_string(dim) + "-seed" + std::to_string(seed);
    Rng rng(derive_seed(seed, 0xf4a));
    e.table.resize(static_cast<Eigen::Index>(vocab), static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < e.table.rows(); ++i)
      for (Eigen::Index j = 0; j < e.table.cols(); ++j) e.table(i, j) = normal01(rng);
    return e;
  }

  auto row(TokenId t) const {
    if (t >= static_cast<TokenId>(table.rows()))
      throw RangeError("embedder: token " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(table.rows()));
    return table.row(t);
  }
};

/// Mean over pairs of the mean per-frame Euclidean distance.
inline double lpaps_proxy(const std::vector<std::pair<TokenSeq, TokenSeq>>& pairs, const FrameEmbedder& e) {
  if (pairs.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto& [gen, ref] = pairs[p];
    if (gen.size() != ref.size())
      throw ShapeError("lpaps_proxy: pair " + std::to_string(p) + " has lengths " + std::to_string(gen.size()) +
                       " and " + std::to_string(ref.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < gen.size(); ++i)
      if (gen[i] != ref[i]) s += (e.row(gen[i]) - e.row(ref[i])).norm();
    total += gen.empty() ? 0.0 : s / static_cast<double>(gen.size());
  }
  return total / static_cast<double>(pairs.size());
}

/// Greedy in-order onset matching. A pair within max_offset contributes its
/// offset; every unmatched onset on either side contributes max_offset. The
/// sum is divided by max(1, longer list length).
inline double desync_analog(const std::vector<std::uint32_t>& generated, const std::vector<std::uint32_t>& reference,
                            double max_offset = 25.0) {
  if (!std::is_sorted(generated.begin(), generated.end()) || !std::is_sorted(reference.begin(), reference.end()))
    throw DomainError("desync_analog: onset lists must be sorted ascending");
  double total = 0.0;
  std::size_t i = 0, j = 0;
  while (i < generated.size() && j < reference.size()) {
    const double g = generated[i], r = reference[j];
    if (std::abs(g - r) <= max_offset) {
      total += std::abs(g - r);
      ++i;
      ++j;
    } else if (g < r) {
      total += max_offset;
      ++i;
    } else {
      total += max_offset;
      ++j;
    }
  }
  total += max_offset * static_cast<double>((generated.size() - i) + (reference.size() - j));
  return total / static_cast<double>(std::max<std::size_t>(1, std::max(generated.size(), reference.size())));
}

struct ReportRow {
  std::string metric;
  double value = 0.0;
  std::size_t count = 0;
  std::string embedder;
  std::string config_hash;
};

/// Tab-separated report with a header line.
inline std::string format_report(const std::vector<ReportRow>& rows) {
  std::string out = "metric\tvalue\tcount\tembedder\tconfig_hash\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.10g", r.value);
    out += r.metric + "\t" + buf + "\t" + std::to_string(r.count) + "\t" + (r.embedder.empty() ? "-" : r.embedder) +
           "\t" + r.config_hash + "\n";
  }
  return out;
}

inline std::vector<ReportRow> parse_report(const std::string& text) {
  std::vector<ReportRow> rows;
  std::size_t start = 0;
  bool header = true;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> f;
    std::size_t s = 0;
    for (;;) {
      const auto t = line.find('\t', s);
      f.push_back(line.substr(s, t == std::string::npos ? std::string::npos : t - s));
      if (t == std::string::npos) break;
      s = t + 1;
    }
    if (f.size() != 5) throw InputError("report line has " + std::to_string(f.size()) + " fields: " + line);
    ReportRow r;
    r.metric = f[0];
    try {
      r.value = std::stod(f[1]);
      r.count = static_cast<std::size_t>(std::stoull(f[2]));
    } catch (const std::exception&) {
      throw InputError("report line has a malformed number: " + line);
    }
    r.embedder = f[3];
    r.config_hash = f[4];
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace bvs::eval
