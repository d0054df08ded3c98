#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "maskmlp/core/adam.hpp"
#include "maskmlp/core/error.hpp"
#include "maskmlp/core/mlp.hpp"
#include "maskmlp/core/rng.hpp"
#include "maskmlp/data/dataset.hpp"
#include "maskmlp/missing/fill.hpp"
#include "maskmlp/pretrain/losses.hpp"

namespace maskmlp {

enum class PretextLoss { cosine, mse, contrastive, triplet, vime };

inline const char* to_string(PretextLoss l) {
  switch (l) {
    case PretextLoss::cosine: return "cosine";
    case PretextLoss::mse: return "mse";
    case PretextLoss::contrastive: return "contrastive";
    case PretextLoss::triplet: return "triplet";
    case PretextLoss::vime: return "vime";
  }
  return "?";
}

inline PretextLoss pretext_loss_from_string(const std::string& s) {
  if (s == "cosine") return PretextLoss::cosine;
  if (s == "mse") return PretextLoss::mse;
  if (s == "contrastive") return PretextLoss::contrastive;
  if (s == "triplet") return PretextLoss::triplet;
  if (s == "vime") return PretextLoss::vime;
  throw ConfigError("unknown pre-training loss '" + s + "'");
}

/// Selected objectives are combined by their arithmetic mean.
struct PretextConfig {
  std::vector<PretextLoss> losses{PretextLoss::cosine};
  double margin = 1.0;
  std::size_t epochs = 50;
  std::size_t batch_size = 128;
  AdamConfig adam;

  void validate() const {
    if (losses.empty()) throw ConfigError("pre-training needs at least one loss");
    for (std::size_t i = 0; i < losses.size(); ++i)
      for (std::size_t j = i + 1; j < losses.size(); ++j)
        if (losses[i] == losses[j]) throw ConfigError(std::string("duplicate pre-training loss ") + to_string(losses[i]));
    if (!(margin > 0.0)) throw ConfigError("margin must be positive");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
  }

  bool uses(PretextLoss l) const { return std::find(losses.begin(), losses.end(), l) != losses.end(); }
};

/// Reconstruction and mask-estimation decoders for the VIME-style pretext:
/// each is one hidden ReLU layer of the embedding width and a linear output.
struct VimeDecoder {
  MlpModel reconstruction;
  MlpModel mask;
};

inline VimeDecoder make_vime_decoder(std::size_t hidden, std::size_t features, Rng& rng) {
  auto build = [&] {
    MlpModel m;
    m.declared_input_dim = hidden;
    m.layers.push_back(make_layer(hidden, hidden, Activation::relu, rng));
    m.layers.push_back(make_layer(hidden, features, Activation::identity, rng));
    return m;
  };
  VimeDecoder d;
  d.reconstruction = build();
  d.mask = build();
  return d;
}

struct PretrainResult {
  MlpModel encoder;
  std::vector<double> epoch_loss;                      // mean step loss per epoch
  std::vector<double> step_total;                      // combined loss per step
  std::vector<std::vector<double>> step_components;    // per step, one entry per selected loss
  std::size_t skipped_cosine_pairs = 0;                // pairs with a zero-norm embedding
};

namespace pretrain_detail {

inline void add_row(Matrix& m, std::size_t r, std::span<const double> g, double w) {
  auto row = m.row(r);
  for (std::size_t i = 0; i < g.size(); ++i) row[i] += w * g[i];
}

// Batches of shuffled positions; a trailing singleton joins the previous
// batch so every batch has a negative candidate.
inline std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> order, std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

}  // namespace pretrain_detail

/// Self-supervised pre-training of `encoder` on the given rows of a scaled
/// feature matrix. Only features are read, so labels cannot leak in.
///
/// Each step materializes the batch with the -1 sentinel, draws a fresh mask
/// per row, embeds both views with the shared encoder, averages the selected
/// losses and takes one Adam step.
inline PretrainResult pretrain(MlpModel encoder, const FeatureMatrix& scaled, std::span<const std::size_t> rows,
                               const PretextConfig& cfg, const MaskSpec& mask, std::uint64_t seed) {
  cfg.validate();
  mask.validate();
  if (scaled.cols() != encoder.input_dim()) {
    throw ShapeError("pretrain: encoder expects " + std::to_string(encoder.input_dim()) + " features, data has " +
                     std::to_string(scaled.cols()));
  }
  PretrainResult result;
  if (cfg.epochs == 0 || rows.empty()) {
    result.encoder = std::move(encoder);
    return result;
  }

  Rng shuffle_rng(derive_seed(seed, "shuffle"));
  Rng mask_rng(derive_seed(seed, "masks"));
  Rng negative_rng(derive_seed(seed, "negatives"));
  Rng decoder_rng(derive_seed(seed, "decoder"));

  const FillPolicy sentinel{FillKind::mask_pretrain, {}};
  const std::size_t d = scaled.cols();
  const std::size_t h = encoder.hidden_size();
  const double n_losses = static_cast<double>(cfg.losses.size());
  const bool needs_negative = cfg.uses(PretextLoss::contrastive) || cfg.uses(PretextLoss::triplet);

  std::optional<Marginals> marginals;
  if (mask.corruption == Corruption::marginal_sample) marginals = Marginals::fit(scaled, rows);
  std::optional<VimeDecoder> decoder;
  std::optional<AdamState> recon_opt, mask_opt;
  if (cfg.uses(PretextLoss::vime)) {
    decoder = make_vime_decoder(h, d, decoder_rng);
    recon_opt = make_adam_state(decoder->reconstruction, cfg.adam);
    mask_opt = make_adam_state(decoder->mask, cfg.adam);
  }
  AdamState opt = make_adam_state(encoder, cfg.adam);

  std::vector<std::size_t> order(rows.begin(), rows.end());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_sum = 0.0;
    const auto batches = pretrain_detail::make_batches(order, cfg.batch_size);
    for (std::size_t step = 0; step < batches.size(); ++step) {
      const auto& batch = batches[step];
      const std::size_t b = batch.size();
      const Matrix x = materialize(sentinel, scaled, batch);
      Matrix xm(b, d);
      std::vector<std::vector<std::uint8_t>> augmented(b);
      for (std::size_t i = 0; i < b; ++i) {
        auto mr = mask_augment(x.row(i), scaled.observed_row(batch[i]), mask, mask_rng, marginals ? &*marginals : nullptr);
        std::copy(mr.values.begin(), mr.values.end(), xm.row(i).begin());
        augmented[i] = std::move(mr.augmented);
      }
      auto orig = forward(encoder, x);
      auto masked = forward(encoder, xm);
      const Matrix& e = orig.embedding;
      const Matrix& em = masked.embedding;

      std::vector<std::size_t> negative(b);
      if (needs_negative) {
        for (std::size_t i = 0; i < b; ++i) {
          if (b == 1) {
            negative[i] = i;
            continue;
          }
          std::size_t j = negative_rng.below(b - 1);
          negative[i] = j >= i ? j + 1 : j;
        }
      }

      Matrix grad_e(b, h), grad_em(b, h);
      std::vector<double> components;
      const double w = 1.0 / (n_losses * static_cast<double>(b));
      for (PretextLoss loss : cfg.losses) {
        double sum = 0.0;
        switch (loss) {
          case PretextLoss::cosine:
            for (std::size_t i = 0; i < b; ++i) {
              PairLoss pl;
              try {
                pl = cosine_embedding_loss(e.row(i), em.row(i));
              } catch (const NumericError&) {
                ++result.skipped_cosine_pairs;
                continue;
              }
              sum += pl.loss;
              pretrain_detail::add_row(grad_e, i, pl.grad_a, w);
              pretrain_detail::add_row(grad_em, i, pl.grad_b, w);
            }
            break;
          case PretextLoss::mse:
            for (std::size_t i = 0; i < b; ++i) {
              const auto pl = mse_embedding_loss(e.row(i), em.row(i));
              sum += pl.loss;
              pretrain_detail::add_row(grad_e, i, pl.grad_a, w);
              pretrain_detail::add_row(grad_em, i, pl.grad_b, w);
            }
            break;
          case PretextLoss::contrastive:
          case PretextLoss::triplet:
            for (std::size_t i = 0; i < b; ++i) {
              const std::size_t j = negative[i];
              const auto tl = loss == PretextLoss::contrastive ? contrastive_loss(e.row(i), em.row(i), e.row(j), cfg.margin)
                                                               : triplet_loss(e.row(i), em.row(i), e.row(j), cfg.margin);
              sum += tl.loss;
              pretrain_detail::add_row(grad_e, i, tl.grad_anchor, w);
              pretrain_detail::add_row(grad_em, i, tl.grad_positive, w);
              pretrain_detail::add_row(grad_e, j, tl.grad_negative, w);
            }
            break;
          case PretextLoss::vime: {
            auto rec = forward(decoder->reconstruction, em);
            auto msk = forward(decoder->mask, em);
            Matrix grad_rec(b, d), grad_msk(b, d);
            for (std::size_t i = 0; i < b; ++i) {
              const auto vl = vime_pretext_loss(x.row(i), scaled.observed_row(batch[i]), augmented[i],
                                                rec.embedding.row(i), msk.embedding.row(i));
              sum += vl.loss;
              pretrain_detail::add_row(grad_rec, i, vl.grad_reconstruction, w);
              pretrain_detail::add_row(grad_msk, i, vl.grad_mask_logits, w);
            }
            Matrix gin_rec, gin_msk;
            const auto g_rec = backward(decoder->reconstruction, rec.cache, grad_rec, &gin_rec);
            const auto g_msk = backward(decoder->mask, msk.cache, grad_msk, &gin_msk);
            for (std::size_t k = 0; k < grad_em.size(); ++k) {
              grad_em.values()[k] += gin_rec.values()[k] + gin_msk.values()[k];
            }
            adam_step(decoder->reconstruction, g_rec, *recon_opt);
            adam_step(decoder->mask, g_msk, *mask_opt);
            break;
          }
        }
        components.push_back(sum / static_cast<double>(b));
      }
      double total = 0.0;
      for (double c : components) total += c;
      total /= n_losses;
      if (!std::isfinite(total)) {
        throw TrainingError("pre-training diverged at epoch " + std::to_string(epoch + 1) + ", step " +
                            std::to_string(step + 1));
      }
      ModelGrads grads = backward(encoder, orig.cache, grad_e);
      add_into(grads, backward(encoder, masked.cache, grad_em));
      adam_step(encoder, grads, opt);

      result.step_total.push_back(total);
      result.step_components.push_back(std::move(components));
      epoch_sum += total;
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(batches.size()));
  }
  result.encoder = std::move(encoder);
  return result;
}

}  // namespace maskmlp
