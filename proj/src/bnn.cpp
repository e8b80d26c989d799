#include "fairdefer/bnn.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace fairdefer {

namespace {

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double inv_softplus(double y) { return std::log(std::expm1(y)); }

}  // namespace

void BnnConfig::validate() const {
  require(hidden_units >= 1, "BnnConfig: hidden_units must be >= 1");
  require(prior_std > 0.0, "BnnConfig: prior_std must be > 0");
  require(predict_samples >= 2, "BnnConfig: predict_samples must be >= 2");
  train.validate();
}

Vector BnnPosterior::std_dev() const {
  return raw_std.unaryExpr([](double v) { return softplus(v); });
}

void BnnPosterior::validate() const {
  shape.validate();
  require(shape.head_kind == HeadKind::binary_logit,
          "BnnPosterior: head must be binary_logit");
  require(mean.size() == shape.param_count() &&
              raw_std.size() == shape.param_count(),
          "BnnPosterior: mean/raw_std size mismatch");
  require(mean.allFinite() && raw_std.allFinite(),
          "BnnPosterior: non-finite posterior parameter");
  require(prior_std > 0.0, "BnnPosterior: prior_std must be > 0");
}

double bnn_kl(const Vector& mean, const Vector& std_dev, double prior_std) {
  require(mean.size() == std_dev.size(), "bnn_kl: size mismatch");
  require(prior_std > 0.0, "bnn_kl: prior_std must be > 0");
  require((std_dev.array() > 0.0).all(), "bnn_kl: std must be > 0");
  double kl = 0.0;
  double p2 = prior_std * prior_std;
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    double s = std_dev[i];
    kl += std::log(prior_std / s) + (s * s + mean[i] * mean[i]) / (2.0 * p2) - 0.5;
  }
  return kl;
}

BnnPosterior bnn_train(const Dataset& data, const BnnConfig& config) {
  config.validate();
  data.validate();

  // Stratified train/validation split, same scheme as train().
  std::mt19937_64 split_rng(config.train.seed);
  std::vector<int> pos, neg;
  for (int i = 0; i < data.n(); ++i)
    (data.labels[i] == 1.0 ? pos : neg).push_back(i);
  std::shuffle(pos.begin(), pos.end(), split_rng);
  std::shuffle(neg.begin(), neg.end(), split_rng);
  std::vector<int> tr_idx, val_idx;
  for (auto* pool : {&pos, &neg}) {
    auto n_val = static_cast<size_t>(std::llround(
        config.train.validation_fraction * static_cast<double>(pool->size())));
    val_idx.insert(val_idx.end(), pool->begin(), pool->begin() + n_val);
    tr_idx.insert(tr_idx.end(), pool->begin() + n_val, pool->end());
  }
  require(tr_idx.size() >= 2 && val_idx.size() >= 1,
          "bnn_train: dataset too small to split");
  std::sort(tr_idx.begin(), tr_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  auto slice = [&](const std::vector<int>& idx, Matrix& X, LossInputs& in) {
    X.resize(idx.size(), data.dim());
    in.labels.resize(idx.size());
    in.sensitive.resize(idx.size());
    for (size_t k = 0; k < idx.size(); ++k) {
      X.row(k) = data.features.row(idx[k]);
      in.labels[k] = data.labels[idx[k]];
      in.sensitive[k] = data.sensitive[idx[k]];
    }
  };
  Matrix x_tr, x_val;
  LossInputs in_tr, in_val;
  slice(tr_idx, x_tr, in_tr);
  slice(val_idx, x_val, in_val);

  BnnPosterior post;
  post.shape = ModelParams::init(static_cast<int>(data.dim()),
                                 config.hidden_units, HeadKind::binary_logit,
                                 config.train.seed);
  post.prior_std = config.prior_std;
  post.mean = post.shape.flatten();
  // start near the prior scale
  post.raw_std = Vector::Constant(post.mean.size(),
                                  inv_softplus(0.5 * config.prior_std));

  Eigen::Index np = post.mean.size();
  // One ADAM state over the stacked (mean, raw_std) parameters; reuse
  // the network optimizer through a layout of twice the size.
  Vector m1 = Vector::Zero(2 * np), m2 = Vector::Zero(2 * np);
  long step = 0;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double lr = config.train.learning_rate;

  LossSpec nll_spec;  // fair_binary with alpha 0 = plain NLL
  nll_spec.kind = LossSpec::Kind::fair_binary;
  nll_spec.alpha_fair = 0.0;

  std::mt19937_64 epoch_rng(config.train.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ModelParams scratch = post.shape;

  auto objective_at_mean = [&](const Matrix& X, const LossInputs& in) {
    scratch.set_flat(post.mean);
    return eval_loss(scratch, X, in, nll_spec) +
           bnn_kl(post.mean, post.std_dev(), post.prior_std);
  };

  double best_val = std::numeric_limits<double>::infinity();
  Vector best_mean = post.mean, best_raw = post.raw_std;
  int since_best = 0;
  double p2 = config.prior_std * config.prior_std;
  for (int epoch = 0; epoch < config.train.max_epochs; ++epoch) {
    Vector noise(np);
    for (Eigen::Index i = 0; i < np; ++i) noise[i] = gauss(epoch_rng);
    Vector sd = post.std_dev();
    Vector w = post.mean + sd.cwiseProduct(noise);
    scratch.set_flat(w);
    Vector g_w = gradient(scratch, x_tr, in_tr, nll_spec);
    // d(NLL)/d mean = g_w; d(NLL)/d raw = g_w * eps * softplus'(raw)
    // KL: d/d mean = mean / prior^2;
    //     d/d sd = -1/sd + sd/prior^2, chained through softplus'.
    Vector g(2 * np);
    for (Eigen::Index i = 0; i < np; ++i) {
      double sp_prime = sigmoid(post.raw_std[i]);
      g[i] = g_w[i] + post.mean[i] / p2;
      g[np + i] = g_w[i] * noise[i] * sp_prime +
                  (-1.0 / sd[i] + sd[i] / p2) * sp_prime;
    }
    require(g.allFinite(), "bnn_train: non-finite gradient");
    ++step;
    m1 = b1 * m1 + (1.0 - b1) * g;
    m2 = b2 * m2 + (1.0 - b2) * g.cwiseProduct(g);
    double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
    double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (Eigen::Index i = 0; i < 2 * np; ++i) {
      double upd = lr * (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + eps);
      if (i < np)
        post.mean[i] -= upd;
      else
        post.raw_std[i - np] -= upd;
    }

    double vl = objective_at_mean(x_val, in_val);
    if (vl < best_val) {
      best_val = vl;
      best_mean = post.mean;
      best_raw = post.raw_std;
      since_best = 0;
    } else if (++since_best >= config.train.patience_epochs) {
      break;
    }
  }
  post.mean = best_mean;
  post.raw_std = best_raw;
  post.validate();
  return post;
}

double bnn_uncertainty(double mu, double sigma) {
  require(sigma >= 0.0, "bnn_uncertainty: negative sigma");
  if (sigma == 0.0) return 0.0;  // all samples agree: fully confident
  double snr = std::abs(mu - 0.5) / sigma;
  if (snr == 0.0) return 1.0;  // mu exactly 0.5: maximal uncertainty
  return sigmoid(std::log(1.0 / snr));
}

BnnPrediction bnn_predict(const BnnPosterior& posterior, const Matrix& features,
                          int j_samples, uint64_t seed) {
  posterior.validate();
  require(j_samples >= 2, "bnn_predict: need J >= 2 samples");
  Eigen::Index n = features.rows();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector sd = posterior.std_dev();
  ModelParams scratch = posterior.shape;
  Matrix probs(n, j_samples);
  for (int j = 0; j < j_samples; ++j) {
    Vector w(posterior.mean.size());
    for (Eigen::Index i = 0; i < w.size(); ++i)
      w[i] = posterior.mean[i] + sd[i] * gauss(rng);
    scratch.set_flat(w);
    probs.col(j) = forward_batch(scratch, features)
                       .col(0)
                       .unaryExpr([](double v) { return sigmoid(v); });
  }
  BnnPrediction out;
  out.mean.resize(n);
  out.std_dev.resize(n);
  out.uncertainty.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mu = probs.row(i).mean();
    double ss = (probs.row(i).array() - mu).square().sum() /
                static_cast<double>(j_samples - 1);
    double sigma = std::sqrt(std::max(ss, 0.0));
    out.mean[i] = mu;
    out.std_dev[i] = sigma;
    out.uncertainty[i] = bnn_uncertainty(mu, sigma);
  }
  return out;
}

}  // namespace fairdefer
