#include "lidpm/toy_denoiser.hpp"

#include <algorithm>
#include <limits>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "lidpm/errors.hpp"
#include "lidpm/random.hpp"

namespace lidpm {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using ConstMap = Eigen::Map<const MatrixXd>;

namespace {

constexpr double kNormEps = 1e-5;
constexpr Eigen::Index kChunk = 8192;
constexpr double kMaxTimeFrequency = 100.0;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

MatrixXd silu(const MatrixXd& x) {
  return x.unaryExpr([](double v) { return v * sigmoid(v); });
}

MatrixXd silu_grad(const MatrixXd& x) {
  return x.unaryExpr([](double v) {
    const double s = sigmoid(v);
    return s * (1.0 + v * (1.0 - s));
  });
}

struct RegTerms {
  double value = 0.0;
  double mean = 0.0;
  double std = 0.0;
};

RegTerms reg_terms(const MatrixXd& y) {
  const double n = static_cast<double>(y.size());
  RegTerms r;
  r.mean = y.sum() / n;
  r.std = std::sqrt((y.array() - r.mean).square().sum() / n);
  r.value = r.mean * r.mean + (r.std - 1.0) * (r.std - 1.0);
  return r;
}

// d(reg)/dy for every component of y.
MatrixXd reg_gradient(const MatrixXd& y, const RegTerms& r) {
  const double n = static_cast<double>(y.size());
  MatrixXd g = MatrixXd::Constant(y.rows(), y.cols(), 2.0 * r.mean / n);
  if (r.std > 0.0) {
    g.array() += 2.0 * (r.std - 1.0) / (n * r.std) * (y.array() - r.mean);
  }
  return g;
}

MatrixXd to_matrix(std::span<const Vec3> pts) {
  MatrixXd m(3, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = pts[i];
  return m;
}

struct NormStats {
  VectorXd mean;
  VectorXd inv_std;
};

}  // namespace

std::string to_string(NormMode mode) {
  return mode == NormMode::PerBatch ? "per-batch" : "per-instance";
}

NormMode norm_mode_from_string(const std::string& name) {
  if (name == "per-batch" || name == "per_batch" || name == "batch") return NormMode::PerBatch;
  if (name == "per-instance" || name == "per_instance" || name == "instance") return NormMode::PerInstance;
  throw std::invalid_argument("unknown normalisation mode '" + name + "'");
}

std::vector<DenoiserQuery> PreparedBatch::queries() const {
  std::vector<DenoiserQuery> qs;
  qs.reserve(noisy.size());
  for (std::size_t b = 0; b < noisy.size(); ++b) {
    qs.push_back({noisy[b], steps[b], conditions[b]});
  }
  return qs;
}

PreparedBatch prepare_batch(std::span<const TrainItem> batch, const NoiseSchedule& sched,
                            std::uint64_t seed, const TrainOptions& opts) {
  if (batch.empty()) throw std::invalid_argument("training batch must not be empty");
  Rng rng(seed);
  std::uniform_int_distribution<int> pick_t(1, sched.steps());
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  PreparedBatch out;
  for (const auto& item : batch) {
    if (item.x0.empty()) throw std::invalid_argument("training item has no points");
    const int t = pick_t(rng);
    const bool keep = coin(rng) < opts.condition_probability;
    Points eps = gaussian_points(item.x0.size(), rng);
    const auto [signal, noise] = sched.scales(t);
    Points noisy(item.x0.size());
    for (std::size_t i = 0; i < noisy.size(); ++i) {
      noisy[i] = opts.objective == Objective::Global ? Vec3(signal * item.x0[i] + noise * eps[i])
                                                     : Vec3(item.x0[i] + noise * eps[i]);
    }
    out.noisy.push_back(std::move(noisy));
    out.targets.push_back(std::move(eps));
    out.steps.push_back(static_cast<double>(t));
    out.conditions.push_back(keep ? item.condition : std::nullopt);
  }
  return out;
}

LossReport evaluate_loss(const Denoiser& d, const PreparedBatch& batch, double reg_weight) {
  LossReport report;
  const auto queries = batch.queries();
  const double B = static_cast<double>(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const MatrixXd y = to_matrix(d.predict_noise(queries[b]));
    const MatrixXd e = to_matrix(batch.targets[b]);
    const double mse = (y - e).squaredNorm() / static_cast<double>(y.cols());
    const double reg = reg_terms(y).value;
    report.denoise += mse / B;
    report.reg += reg / B;
    report.loss += (mse + reg_weight * reg) / B;
    report.item_losses.push_back(mse + reg_weight * reg);
  }
  return report;
}

// ---------------------------------------------------------------------------

struct ToyDenoiser::Forward {
  std::vector<MatrixXd> u;                 // features per instance
  std::vector<MatrixXd> xhat;              // normalised first layer
  std::vector<MatrixXd> n0;                // after affine
  std::vector<std::vector<MatrixXd>> z;    // pre-activations of layers >= 1
  std::vector<std::vector<MatrixXd>> a;    // activations, a[0] = silu(n0)
  std::vector<MatrixXd> y;
  std::vector<VectorXd> inv_std;           // per instance (shared values for PerBatch)
  std::vector<std::size_t> group;          // group id per instance
};

ToyDenoiser::ToyDenoiser(ToyDenoiserConfig config, NoiseSchedule schedule, std::uint64_t init_seed)
    : config_(std::move(config)), schedule_(std::move(schedule)) {
  if (config_.time_frequencies < 1) throw std::invalid_argument("time_frequencies must be >= 1");
  if (!(config_.coord_scale > 0.0)) throw std::invalid_argument("coord_scale must be > 0");
  for (int h : config_.hidden) {
    if (h < 1) throw std::invalid_argument("hidden widths must be >= 1");
  }
  build_layout();

  Rng rng(init_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& blk : blocks_) {
    double* p = params_.data() + blk.offset;
    const std::size_t n = static_cast<std::size_t>(blk.rows) * static_cast<std::size_t>(blk.cols);
    const bool is_weight = blk.name.ends_with(".W") || blk.name.ends_with(".V");
    if (is_weight) {
      // Layers with a skip input share their fan-in between W and V.
      double fan_in = blk.cols;
      if (blk.name != "l0.W" && blk.name != "out.W" && blk.name.front() == 'l') {
        fan_in = static_cast<double>(input_dim_) + config_.hidden[std::stoul(blk.name.substr(1)) - 1];
      }
      const double scale = 1.0 / std::sqrt(fan_in);
      for (std::size_t i = 0; i < n; ++i) p[i] = scale * normal(rng);
    } else if (blk.name.ends_with(".gamma")) {
      std::fill(p, p + n, 1.0);
    } else {
      std::fill(p, p + n, 0.0);
    }
  }
}

void ToyDenoiser::build_layout() {
  input_dim_ = 3 + 2 * static_cast<std::size_t>(config_.time_frequencies) + 6;
  blocks_.clear();
  std::size_t offset = 0;
  auto add = [&](std::string name, int rows, int cols) {
    blocks_.push_back({std::move(name), rows, cols, offset});
    offset += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  };
  const int D = static_cast<int>(input_dim_);
  const auto& H = config_.hidden;
  if (H.empty()) {
    add("out.W", 3, D);
    add("out.b", 3, 1);
  } else {
    add("l0.W", H[0], D);
    add("l0.gamma", H[0], 1);
    add("l0.beta", H[0], 1);
    for (std::size_t l = 1; l < H.size(); ++l) {
      const std::string p = "l" + std::to_string(l);
      add(p + ".W", H[l], H[l - 1]);
      add(p + ".V", H[l], D);
      add(p + ".b", H[l], 1);
    }
    add("out.W", 3, H.back());
    add("out.b", 3, 1);
  }
  params_.assign(offset, 0.0);
}

VectorXd ToyDenoiser::condition_summary(const std::optional<std::span<const Vec3>>& cond) const {
  VectorXd s = VectorXd::Zero(6);
  if (!cond || cond->empty()) return s;
  const double n = static_cast<double>(cond->size());
  Vec3 mean = Vec3::Zero();
  for (const auto& p : *cond) mean += p;
  mean /= n;
  Vec3 var = Vec3::Zero();
  for (const auto& p : *cond) var += (p - mean).cwiseAbs2();
  var /= n;
  const double sc = config_.coord_scale;
  s.head<3>() = mean / sc;
  s.tail<3>() = var / (sc * sc);
  return s;
}

MatrixXd ToyDenoiser::features(std::span<const Vec3> pts, double t, const VectorXd& cond) const {
  const auto n = static_cast<Eigen::Index>(pts.size());
  const int K = config_.time_frequencies;
  MatrixXd u(static_cast<Eigen::Index>(input_dim_), n);
  VectorXd fixed(2 * K + 6);
  const double tau = t / static_cast<double>(schedule_.steps());
  for (int k = 0; k < K; ++k) {
    const double freq = K == 1 ? 1.0 : std::pow(kMaxTimeFrequency, static_cast<double>(k) / (K - 1));
    fixed(k) = std::sin(tau * freq);
    fixed(K + k) = std::cos(tau * freq);
  }
  fixed.tail<6>() = cond;
  const double inv_scale = 1.0 / config_.coord_scale;
  for (Eigen::Index i = 0; i < n; ++i) {
    u.col(i).head<3>() = pts[static_cast<std::size_t>(i)] * inv_scale;
    u.col(i).tail(2 * K + 6) = fixed;
  }
  return u;
}

std::vector<Points> ToyDenoiser::predict_batch(std::span<const DenoiserQuery> queries) const {
  for (const auto& q : queries) check_query(q);
  const auto& H = config_.hidden;
  std::vector<VectorXd> conds;
  conds.reserve(queries.size());
  for (const auto& q : queries) conds.push_back(condition_summary(q.condition));

  std::vector<Points> out(queries.size());
  if (H.empty()) {
    const ConstMap W(params_.data() + blocks_[0].offset, 3, static_cast<Eigen::Index>(input_dim_));
    const ConstMap b(params_.data() + blocks_[1].offset, 3, 1);
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
      const auto& q = queries[qi];
      Points y(q.noisy.size());
      for (std::size_t s = 0; s < q.noisy.size(); s += kChunk) {
        const std::size_t m = std::min<std::size_t>(kChunk, q.noisy.size() - s);
        const MatrixXd u = features(q.noisy.subspan(s, m), q.t, conds[qi]);
        const MatrixXd yc = (W * u).colwise() + b.col(0);
        for (std::size_t i = 0; i < m; ++i) y[s + i] = yc.col(static_cast<Eigen::Index>(i));
      }
      out[qi] = std::move(y);
    }
    return out;
  }

  const auto D = static_cast<Eigen::Index>(input_dim_);
  const ConstMap W0(params_.data() + blocks_[0].offset, H[0], D);
  const ConstMap gamma(params_.data() + blocks_[1].offset, H[0], 1);
  const ConstMap beta(params_.data() + blocks_[2].offset, H[0], 1);

  // Group statistics in two passes over point chunks.
  const bool per_batch = config_.norm_mode == NormMode::PerBatch;
  const std::size_t n_groups = per_batch ? 1 : queries.size();
  auto group_of = [&](std::size_t qi) { return per_batch ? std::size_t{0} : qi; };
  std::vector<VectorXd> sum(n_groups, VectorXd::Zero(H[0]));
  std::vector<double> count(n_groups, 0.0);
  auto for_chunks = [&](auto&& fn) {
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
      const auto& q = queries[qi];
      for (std::size_t s = 0; s < q.noisy.size(); s += kChunk) {
        const std::size_t m = std::min<std::size_t>(kChunk, q.noisy.size() - s);
        fn(qi, s, m, features(q.noisy.subspan(s, m), q.t, conds[qi]));
      }
    }
  };
  for_chunks([&](std::size_t qi, std::size_t, std::size_t m, const MatrixXd& u) {
    sum[group_of(qi)] += (W0 * u).rowwise().sum();
    count[group_of(qi)] += static_cast<double>(m);
  });
  std::vector<NormStats> stats(n_groups);
  for (std::size_t g = 0; g < n_groups; ++g) {
    stats[g].mean = count[g] > 0 ? VectorXd(sum[g] / count[g]) : VectorXd::Zero(H[0]);
    sum[g].setZero();
  }
  for_chunks([&](std::size_t qi, std::size_t, std::size_t, const MatrixXd& u) {
    const MatrixXd h = (W0 * u).colwise() - stats[group_of(qi)].mean;
    sum[group_of(qi)] += h.array().square().rowwise().sum().matrix();
  });
  for (std::size_t g = 0; g < n_groups; ++g) {
    const VectorXd var = count[g] > 0 ? VectorXd(sum[g] / count[g]) : VectorXd::Zero(H[0]);
    stats[g].inv_std = (var.array() + kNormEps).rsqrt().matrix();
  }

  for (std::size_t qi = 0; qi < queries.size(); ++qi) out[qi].resize(queries[qi].noisy.size());
  for_chunks([&](std::size_t qi, std::size_t s, std::size_t m, const MatrixXd& u) {
    const NormStats& st = stats[group_of(qi)];
    MatrixXd h = (W0 * u).colwise() - st.mean;
    h = h.array().colwise() * (st.inv_std.array() * gamma.col(0).array());
    h.colwise() += beta.col(0);
    MatrixXd a = silu(h);
    std::size_t bi = 3;
    for (std::size_t l = 1; l < H.size(); ++l) {
      const ConstMap W(params_.data() + blocks_[bi].offset, H[l], H[l - 1]);
      const ConstMap V(params_.data() + blocks_[bi + 1].offset, H[l], D);
      const ConstMap b(params_.data() + blocks_[bi + 2].offset, H[l], 1);
      MatrixXd zl = W * a + V * u;
      zl.colwise() += b.col(0);
      a = silu(zl);
      bi += 3;
    }
    const ConstMap Wo(params_.data() + blocks_[bi].offset, 3, H.back());
    const ConstMap bo(params_.data() + blocks_[bi + 1].offset, 3, 1);
    const MatrixXd y = (Wo * a).colwise() + bo.col(0);
    for (std::size_t i = 0; i < m; ++i) out[qi][s + i] = y.col(static_cast<Eigen::Index>(i));
  });
  return out;
}

Points ToyDenoiser::predict_noise(const DenoiserQuery& q) const {
  return std::move(predict_batch(std::span<const DenoiserQuery>(&q, 1)).front());
}

LossReport ToyDenoiser::loss_and_gradient(const PreparedBatch& batch, double reg_weight,
                                          std::vector<double>* grad) const {
  const auto queries = batch.queries();
  for (const auto& q : queries) check_query(q);
  const std::size_t B = batch.size();
  const auto& H = config_.hidden;
  const auto D = static_cast<Eigen::Index>(input_dim_);
  const double* P = params_.data();

  Forward f;
  f.u.resize(B);
  for (std::size_t b = 0; b < B; ++b) {
    f.u[b] = features(queries[b].noisy, queries[b].t, condition_summary(queries[b].condition));
  }

  std::size_t out_block = 0;
  if (H.empty()) {
    const ConstMap W(P + blocks_[0].offset, 3, D);
    const ConstMap bo(P + blocks_[1].offset, 3, 1);
    for (std::size_t b = 0; b < B; ++b) f.y.push_back((W * f.u[b]).colwise() + bo.col(0));
  } else {
    const ConstMap W0(P + blocks_[0].offset, H[0], D);
    const ConstMap gamma(P + blocks_[1].offset, H[0], 1);
    const ConstMap beta(P + blocks_[2].offset, H[0], 1);
    const bool per_batch = config_.norm_mode == NormMode::PerBatch;

    std::vector<MatrixXd> h0(B);
    for (std::size_t b = 0; b < B; ++b) h0[b] = W0 * f.u[b];
    f.group.resize(B);
    for (std::size_t b = 0; b < B; ++b) f.group[b] = per_batch ? 0 : b;
    const std::size_t n_groups = per_batch ? 1 : B;
    std::vector<NormStats> stats(n_groups);
    for (std::size_t g = 0; g < n_groups; ++g) {
      VectorXd s = VectorXd::Zero(H[0]);
      double n = 0;
      for (std::size_t b = 0; b < B; ++b) {
        if (f.group[b] != g) continue;
        s += h0[b].rowwise().sum();
        n += static_cast<double>(h0[b].cols());
      }
      stats[g].mean = s / n;
      VectorXd v = VectorXd::Zero(H[0]);
      for (std::size_t b = 0; b < B; ++b) {
        if (f.group[b] != g) continue;
        v += (h0[b].colwise() - stats[g].mean).array().square().rowwise().sum().matrix();
      }
      stats[g].inv_std = ((v / n).array() + kNormEps).rsqrt().matrix();
    }

    f.xhat.resize(B);
    f.n0.resize(B);
    f.z.assign(B, {});
    f.a.assign(B, {});
    f.inv_std.resize(B);
    for (std::size_t b = 0; b < B; ++b) {
      const NormStats& st = stats[f.group[b]];
      f.inv_std[b] = st.inv_std;
      f.xhat[b] = (h0[b].colwise() - st.mean).array().colwise() * st.inv_std.array();
      f.n0[b] = (f.xhat[b].array().colwise() * gamma.col(0).array()).matrix().colwise() + beta.col(0);
      f.a[b].push_back(silu(f.n0[b]));
      std::size_t bi = 3;
      for (std::size_t l = 1; l < H.size(); ++l) {
        const ConstMap W(P + blocks_[bi].offset, H[l], H[l - 1]);
        const ConstMap V(P + blocks_[bi + 1].offset, H[l], D);
        const ConstMap bl(P + blocks_[bi + 2].offset, H[l], 1);
        MatrixXd zl = W * f.a[b].back() + V * f.u[b];
        zl.colwise() += bl.col(0);
        f.a[b].push_back(silu(zl));
        f.z[b].push_back(std::move(zl));
        bi += 3;
      }
      out_block = bi;
      const ConstMap Wo(P + blocks_[bi].offset, 3, H.back());
      const ConstMap bo(P + blocks_[bi + 1].offset, 3, 1);
      f.y.push_back((Wo * f.a[b].back()).colwise() + bo.col(0));
    }
  }

  // Loss and its gradient with respect to the outputs.
  LossReport report;
  const double Bd = static_cast<double>(B);
  std::vector<MatrixXd> dy(B);
  for (std::size_t b = 0; b < B; ++b) {
    const MatrixXd e = to_matrix(batch.targets[b]);
    const double n = static_cast<double>(f.y[b].cols());
    const MatrixXd diff = f.y[b] - e;
    const double mse = diff.squaredNorm() / n;
    const RegTerms r = reg_terms(f.y[b]);
    const double reg = r.value;
    dy[b] = diff * (2.0 / (Bd * n));
    if (reg_weight != 0.0) dy[b] += (reg_weight / Bd) * reg_gradient(f.y[b], r);
    report.denoise += mse / Bd;
    report.reg += reg / Bd;
    report.loss += (mse + reg_weight * reg) / Bd;
    report.item_losses.push_back(mse + reg_weight * reg);
  }
  if (grad == nullptr) return report;

  grad->assign(params_.size(), 0.0);
  double* G = grad->data();
  using Map = Eigen::Map<MatrixXd>;

  if (H.empty()) {
    Map dW(G + blocks_[0].offset, 3, D);
    Map db(G + blocks_[1].offset, 3, 1);
    for (std::size_t b = 0; b < B; ++b) {
      dW += dy[b] * f.u[b].transpose();
      db += dy[b].rowwise().sum();
    }
    return report;
  }

  const ConstMap gamma(P + blocks_[1].offset, H[0], 1);
  Map dW0(G + blocks_[0].offset, H[0], D);
  Map dgamma(G + blocks_[1].offset, H[0], 1);
  Map dbeta(G + blocks_[2].offset, H[0], 1);
  const ConstMap Wo(P + blocks_[out_block].offset, 3, H.back());
  Map dWo(G + blocks_[out_block].offset, 3, H.back());
  Map dbo(G + blocks_[out_block + 1].offset, 3, 1);

  std::vector<MatrixXd> dxhat(B);
  for (std::size_t b = 0; b < B; ++b) {
    dWo += dy[b] * f.a[b].back().transpose();
    dbo += dy[b].rowwise().sum();
    MatrixXd da = Wo.transpose() * dy[b];
    std::size_t bi = out_block;
    for (std::size_t l = H.size() - 1; l >= 1; --l) {
      bi -= 3;
      const ConstMap W(P + blocks_[bi].offset, H[l], H[l - 1]);
      Map dW(G + blocks_[bi].offset, H[l], H[l - 1]);
      Map dV(G + blocks_[bi + 1].offset, H[l], D);
      Map dbl(G + blocks_[bi + 2].offset, H[l], 1);
      const MatrixXd dz = da.cwiseProduct(silu_grad(f.z[b][l - 1]));
      dW += dz * f.a[b][l - 1].transpose();
      dV += dz * f.u[b].transpose();
      dbl += dz.rowwise().sum();
      da = W.transpose() * dz;
    }
    const MatrixXd dn0 = da.cwiseProduct(silu_grad(f.n0[b]));
    dgamma += dn0.cwiseProduct(f.xhat[b]).rowwise().sum();
    dbeta += dn0.rowwise().sum();
    dxhat[b] = dn0.array().colwise() * gamma.col(0).array();
  }

  // Back through the normalisation, group by group.
  const std::size_t n_groups = *std::max_element(f.group.begin(), f.group.end()) + 1;
  for (std::size_t g = 0; g < n_groups; ++g) {
    VectorXd mean_dx = VectorXd::Zero(H[0]);
    VectorXd mean_dxx = VectorXd::Zero(H[0]);
    double n = 0;
    for (std::size_t b = 0; b < B; ++b) {
      if (f.group[b] != g) continue;
      mean_dx += dxhat[b].rowwise().sum();
      mean_dxx += dxhat[b].cwiseProduct(f.xhat[b]).rowwise().sum();
      n += static_cast<double>(dxhat[b].cols());
    }
    mean_dx /= n;
    mean_dxx /= n;
    for (std::size_t b = 0; b < B; ++b) {
      if (f.group[b] != g) continue;
      MatrixXd dh = (dxhat[b].colwise() - mean_dx) -
                    MatrixXd(f.xhat[b].array().colwise() * mean_dxx.array());
      dh = dh.array().colwise() * f.inv_std[b].array();
      dW0 += dh * f.u[b].transpose();
    }
  }
  return report;
}

LossReport ToyDenoiser::train_step(std::span<const TrainItem> batch, std::uint64_t seed,
                                   const TrainOptions& opts) {
  if (!(opts.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  const PreparedBatch prepared = prepare_batch(batch, schedule_, seed, opts);
  std::vector<double> grad;
  const LossReport report = loss_and_gradient(prepared, opts.reg_weight, &grad);
  for (std::size_t b = 0; b < report.item_losses.size(); ++b) {
    if (!std::isfinite(report.item_losses[b])) {
      throw NumericalError("non-finite training loss for batch item " + std::to_string(b) +
                               " at t = " + std::to_string(static_cast<int>(prepared.steps[b])),
                           prepared.steps[b]);
    }
  }
  std::vector<double> updated = params_;
  std::vector<double> m = adam_m_;
  std::vector<double> v = adam_v_;
  if (opts.optimizer == Optimizer::Sgd) {
    for (std::size_t i = 0; i < updated.size(); ++i) updated[i] -= opts.learning_rate * grad[i];
  } else {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    m.resize(params_.size(), 0.0);
    v.resize(params_.size(), 0.0);
    const long k = adam_steps_ + 1;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(k));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(k));
    for (std::size_t i = 0; i < updated.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
      v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
      updated[i] -= opts.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
  // Parameters are stored as float32, so values beyond its range count as divergence.
  constexpr double kMax = std::numeric_limits<float>::max();
  if (!std::all_of(updated.begin(), updated.end(), [](double x) { return std::abs(x) <= kMax; })) {
    throw NumericalError("non-finite parameters after update", prepared.steps.front());
  }
  params_ = std::move(updated);
  if (opts.optimizer == Optimizer::Adam) {
    adam_m_ = std::move(m);
    adam_v_ = std::move(v);
    ++adam_steps_;
  }
  return report;
}

void ToyDenoiser::snap_to_float32() {
  for (double& p : params_) p = static_cast<double>(static_cast<float>(p));
}

// ---------------------------------------------------------------------------
// Serialisation

namespace {

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return (v >> 24) | ((v >> 8) & 0xFF00u) | ((v << 8) & 0xFF0000u) | (v << 24);
  }
  return v;
}

}  // namespace

void ToyDenoiser::save(const std::filesystem::path& path) const {
  nlohmann::json meta;
  meta["format"] = "lidpm-toy-denoiser";
  meta["version"] = 1;
  meta["dtype"] = "float32";
  meta["byte_order"] = "little";
  meta["hidden"] = config_.hidden;
  meta["norm_mode"] = to_string(config_.norm_mode);
  meta["time_frequencies"] = config_.time_frequencies;
  meta["coord_scale"] = config_.coord_scale;
  meta["input_dim"] = input_dim_;
  meta["parameter_count"] = params_.size();
  meta["schedule_betas"] = schedule_.betas();
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : blocks_) {
    blocks.push_back({{"name", b.name}, {"shape", {b.rows, b.cols}}, {"offset", b.offset}});
  }
  meta["blocks"] = blocks;

  std::ofstream bin(path, std::ios::binary | std::ios::trunc);
  if (!bin) throw DataError("cannot open '" + path.string() + "' for writing");
  for (double p : params_) {
    const auto bits = to_little(std::bit_cast<std::uint32_t>(static_cast<float>(p)));
    bin.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
  }
  if (!bin) throw DataError("failed writing '" + path.string() + "'");

  std::ofstream js(sidecar_path(path), std::ios::trunc);
  if (!js) throw DataError("cannot open '" + sidecar_path(path).string() + "' for writing");
  js << meta.dump(2) << '\n';
}

ToyDenoiser ToyDenoiser::load(const std::filesystem::path& path) {
  std::ifstream js(sidecar_path(path));
  if (!js) throw DataError("missing parameter sidecar '" + sidecar_path(path).string() + "'");
  nlohmann::json meta;
  try {
    js >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed parameter sidecar: " + std::string(e.what()));
  }
  if (meta.value("format", "") != "lidpm-toy-denoiser") {
    throw DataError("'" + sidecar_path(path).string() + "' is not a toy-denoiser sidecar");
  }
  ToyDenoiserConfig cfg;
  cfg.hidden = meta.at("hidden").get<std::vector<int>>();
  cfg.norm_mode = norm_mode_from_string(meta.at("norm_mode").get<std::string>());
  cfg.time_frequencies = meta.at("time_frequencies").get<int>();
  cfg.coord_scale = meta.at("coord_scale").get<double>();
  ToyDenoiser model(cfg, NoiseSchedule::from_betas(meta.at("schedule_betas").get<std::vector<double>>()),
                    0);
  const auto expected = meta.at("parameter_count").get<std::size_t>();
  if (expected != model.params_.size()) {
    throw DataError("sidecar parameter count does not match its layer shapes");
  }

  std::ifstream bin(path, std::ios::binary | std::ios::ate);
  if (!bin) throw DataError("cannot open '" + path.string() + "'");
  const auto bytes = static_cast<std::size_t>(bin.tellg());
  if (bytes != expected * sizeof(float)) {
    throw ParseError("parameter file has " + std::to_string(bytes) + " bytes, expected " +
                         std::to_string(expected * sizeof(float)),
                     std::min(bytes, expected * sizeof(float)));
  }
  bin.seekg(0);
  for (double& p : model.params_) {
    std::uint32_t bits = 0;
    bin.read(reinterpret_cast<char*>(&bits), sizeof(bits));
    p = static_cast<double>(std::bit_cast<float>(to_little(bits)));
  }
  return model;
}

// ---------------------------------------------------------------------------

GradientCheckReport gradient_check(const ToyDenoiser& model, const PreparedBatch& probe,
                                   const GradientCheckOptions& opts) {
  if (!(opts.eps >= 1e-6 && opts.eps <= 1e-3)) {
    throw std::invalid_argument("finite-difference step must lie in [1e-6, 1e-3]");
  }
  ToyDenoiser work = model;
  std::vector<double> analytic;
  work.loss_and_gradient(probe, opts.reg_weight, &analytic);
  if (opts.corrupt_gradient) opts.corrupt_gradient(analytic);

  const std::size_t P = work.parameters().size();
  std::set<std::size_t> chosen(opts.always_check.begin(), opts.always_check.end());
  Rng rng(opts.seed);
  std::uniform_int_distribution<std::size_t> pick(0, P - 1);
  const std::size_t target = std::min<std::size_t>(P, chosen.size() + static_cast<std::size_t>(opts.num_params));
  while (chosen.size() < target) chosen.insert(pick(rng));

  GradientCheckReport report;
  auto& params = work.parameters();
  for (std::size_t idx : chosen) {
    const double saved = params[idx];
    params[idx] = saved + opts.eps;
    const double lp = work.loss_and_gradient(probe, opts.reg_weight, nullptr).loss;
    params[idx] = saved - opts.eps;
    const double lm = work.loss_and_gradient(probe, opts.reg_weight, nullptr).loss;
    params[idx] = saved;
    const double numeric = (lp - lm) / (2.0 * opts.eps);
    const double a = analytic[idx];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
    report.max_rel_error = std::max(report.max_rel_error, std::abs(a - numeric) / denom);
    report.checked.push_back(idx);
  }
  return report;
}

GradientCheckReport gradient_check(const ToyDenoiser& model, const DenoiserQuery& probe,
                                   const GradientCheckOptions& opts) {
  PreparedBatch batch;
  batch.noisy.emplace_back(probe.noisy.begin(), probe.noisy.end());
  Rng rng(opts.seed ^ 0x5DEECE66DULL);
  batch.targets.push_back(gaussian_points(probe.noisy.size(), rng));
  batch.steps.push_back(probe.t);
  batch.conditions.push_back(probe.condition);
  return gradient_check(model, batch, opts);
}

}  // namespace lidpm
