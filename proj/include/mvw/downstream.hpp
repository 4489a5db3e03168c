#pragma once

#include <utility>
#include <vector>

#include "mvw/base_model.hpp"

namespace mvw {

/// Frame-level model: the base architecture's encoder/embedding/transformer
/// skeleton plus the latent embedding module (LEM) and a per-frame head.
/// The transferred latents enter as constants; the base model stays frozen.
template <class S>
class DownstreamModel {
 public:
  using Index = typename Graph<S>::Index;

  DownstreamModel(DownstreamConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    skeleton::createParams(params_, cfg_.base);
    params_.create("lem.w", cfg_.base.d, cfg_.base.d);
    params_.create("lem.b", 1, cfg_.base.d);
    const int head_in = cfg_.use_latents ? 2 * cfg_.base.d : cfg_.base.d;
    params_.create("head.fc1.w", head_in, cfg_.head_hidden1);
    params_.create("head.fc1.b", 1, cfg_.head_hidden1);
    params_.create("head.fc2.w", cfg_.head_hidden1, cfg_.head_hidden2);
    params_.create("head.fc2.b", 1, cfg_.head_hidden2);
    params_.create("head.fc3.w", cfg_.head_hidden2, cfg_.c_task);
    params_.create("head.fc3.b", 1, cfg_.c_task);

    Rng rng(Rng::mix(seed, 0x646f776eull));
    skeleton::initParams(params_, rng);
  }

  const DownstreamConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }

  /// View-mean of the transferred latent embeddings followed by the width-d
  /// linear projection. rho holds one T x d matrix per latent view.
  Index lem(Graph<S>& g, const std::vector<Mat<S>>& rho) const {
    if (rho.empty()) throw DataError("lem: empty latent embedding set");
    const int T = cfg_.base.num_frames;
    Mat<S> mean = Mat<S>::Zero(T, cfg_.base.d);
    for (const Mat<S>& r : rho) {
      if (r.rows() != T || r.cols() != cfg_.base.d)
        throw DataError("lem: latent embedding shape mismatch");
      mean += r;
    }
    mean /= static_cast<S>(rho.size());
    ParamStore<S>& params = mutableParams();
    return g.addRowBroadcast(g.matmul(g.constant(std::move(mean)), g.leaf(params.at("lem.w"))),
                             g.leaf(params.at("lem.b")));
  }

  /// Own encoder -> embeddings -> transformer branches -> view fusion, then
  /// [phi_fused || lem(rho)] through the three-layer sigmoid head.
  /// With use_latents off the LEM path and concatenation are skipped.
  Index forward(Graph<S>& g, const SeqInput<S>& in, const std::vector<Mat<S>>* rho) const {
    const ModelConfig& cfg = cfg_.base;
    ParamStore<S>& params = mutableParams();
    std::vector<Index> psi = skeleton::encodeFrames(g, cfg, params, in.pixels);
    std::vector<Index> phi;
    for (int s = 0; s < cfg.num_views; ++s) {
      Index psi_f = skeleton::applyEmbeddings(g, cfg, params, psi[s], s, in.pd,
                                              cfg.use_sl ? in.sl[s] : Mat<S>());
      phi.push_back(skeleton::transformerBranch(g, cfg, params, psi_f, s));
    }
    Index fused = BaseModel<S>::ptbFuse(g, phi, cfg.ptb_op);

    Index head_in = fused;
    if (cfg_.use_latents) {
      if (!rho) throw DataError("downstream forward: latents required but missing");
      head_in = g.concatCols({fused, lem(g, *rho)});
    }
    Index x = g.relu(g.addRowBroadcast(g.matmul(head_in, g.leaf(params.at("head.fc1.w"))),
                                       g.leaf(params.at("head.fc1.b"))));
    x = g.relu(g.addRowBroadcast(g.matmul(x, g.leaf(params.at("head.fc2.w"))),
                                 g.leaf(params.at("head.fc2.b"))));
    return g.sigmoid(g.addRowBroadcast(g.matmul(x, g.leaf(params.at("head.fc3.w"))),
                                       g.leaf(params.at("head.fc3.b"))));
  }

  Mat<S> forwardValues(const SeqInput<S>& in, const std::vector<Mat<S>>* rho) const {
    Graph<S> g;
    return g.val(forward(g, in, rho));
  }

 private:
  ParamStore<S>& mutableParams() const { return const_cast<ParamStore<S>&>(params_); }

  DownstreamConfig cfg_;
  ParamStore<S> params_;
};

}  // namespace mvw
