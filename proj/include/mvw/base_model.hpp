#pragma once

#include <utility>
#include <vector>

#include "mvw/graph.hpp"
#include "mvw/model_config.hpp"
#include "mvw/params.hpp"

namespace mvw {

constexpr double kL2NormEps = 1e-12;
constexpr double kLayerNormEps = 1e-5;

/// One sequence prepared for a forward pass: per-view pixel stacks plus the
/// person-detection and spatial-localization inputs.
template <class S>
struct SeqInput {
  std::vector<Mat<S>> pixels;  // per view, (T*H*W) x 3
  Mat<S> pd;                   // S x T, binary
  std::vector<Mat<S>> sl;      // per view, T x N
};

/// Value-level view fusion, usable outside any graph.
template <class S>
Mat<S> ptbFuseValues(const std::vector<Mat<S>>& views, PtbOp op) {
  if (views.empty()) throw DataError("ptbFuse: no views");
  Mat<S> out = views[0];
  for (std::size_t k = 1; k < views.size(); ++k) {
    if (views[k].rows() != out.rows() || views[k].cols() != out.cols())
      throw DataError("ptbFuse: view shape mismatch");
    switch (op) {
      case PtbOp::max: out = out.cwiseMax(views[k]); break;
      default: out += views[k]; break;
    }
  }
  if (op == PtbOp::mean) out /= static_cast<S>(views.size());
  return out;
}

// The encoder/embedding/transformer skeleton is shared between the base and
// downstream models (same layer structure and parameter names, separate
// parameter stores).
namespace skeleton {

template <class S>
void createParams(ParamStore<S>& params, const ModelConfig& cfg) {
  const int d = cfg.d;
  const auto& f = cfg.conv_filters;
  params.create("enc.conv1.w", 9 * 3, f[0]);
  params.create("enc.conv1.b", 1, f[0]);
  params.create("enc.conv2.w", 9 * f[0], f[1]);
  params.create("enc.conv2.b", 1, f[1]);
  params.create("enc.conv3.w", 9 * f[1], f[2]);
  params.create("enc.conv3.b", 1, f[2]);
  params.create("enc.fc.w", cfg.flattenedWidth(), d);
  params.create("enc.fc.b", 1, d);

  if (cfg.use_sl)
    for (int s = 0; s < cfg.num_views; ++s)
      params.create("emb.sl." + std::to_string(s) + ".w", cfg.sl_width, d);
  params.create("emb.frame", cfg.num_frames, d);
  params.create("emb.cam", cfg.num_views, d);

  for (int s = 0; s < cfg.num_views; ++s) {
    const std::string p = "tr." + std::to_string(s) + ".";
    for (const char* w : {"wq", "wk", "wv", "wo"}) params.create(p + w, d, d);
    for (const char* b : {"bq", "bk", "bv", "bo"}) params.create(p + b, 1, d);
    params.create(p + "ffn1.w", d, cfg.ffn_hidden);
    params.create(p + "ffn1.b", 1, cfg.ffn_hidden);
    params.create(p + "ffn2.w", cfg.ffn_hidden, d);
    params.create(p + "ffn2.b", 1, d);
    if (cfg.layer_norm) {
      params.create(p + "ln1.g", 1, d);
      params.create(p + "ln1.b", 1, d);
      params.create(p + "ln2.g", 1, d);
      params.create(p + "ln2.b", 1, d);
    }
  }
}

template <class S>
void initParams(ParamStore<S>& params, Rng& rng) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<S>& p = params[i];
    if (p.name == "emb.frame" || p.name == "emb.cam") {
      initTable(p, rng);
    } else if (p.name.ends_with(".g")) {
      p.value.setOnes();  // layer-norm gains
    } else if (p.name.ends_with(".b")) {
      p.value.setZero();  // biases and layer-norm shifts
    } else {
      initUniformFanIn(p, p.value.rows(), rng);
    }
  }
}

/// Shared conv encoder: three 3x3 conv + ReLU + 2x2 max-pool stages, then a
/// width-d dense layer with ReLU. One parameter set serves every view.
template <class S>
std::vector<typename Graph<S>::Index> encodeFrames(Graph<S>& g, const ModelConfig& cfg,
                                                   ParamStore<S>& params,
                                                   const std::vector<Mat<S>>& pixels) {
  using Index = typename Graph<S>::Index;
  if (static_cast<int>(pixels.size()) != cfg.num_views)
    throw DataError("encodeFrames: expected " + std::to_string(cfg.num_views) + " views");
  std::vector<Index> out;
  const int T = cfg.num_frames;
  for (const Mat<S>& px : pixels) {
    if (px.rows() != static_cast<Eigen::Index>(T) * cfg.image_size * cfg.image_size ||
        px.cols() != 3)
      throw DataError("encodeFrames: pixel stack shape mismatch at layer conv1");
    Index x = g.constant(px);
    int h = cfg.image_size;
    for (int layer = 0; layer < 3; ++layer) {
      const std::string p = "enc.conv" + std::to_string(layer + 1);
      x = g.conv2dSame3x3(x, g.leaf(params.at(p + ".w")), g.leaf(params.at(p + ".b")), T, h, h);
      x = g.relu(x);
      x = g.maxPool2x2(x, T, h, h);
      h /= 2;
    }
    x = g.flattenFrames(x, T, h, h);
    x = g.addRowBroadcast(g.matmul(x, g.leaf(params.at("enc.fc.w"))), g.leaf(params.at("enc.fc.b")));
    out.push_back(g.relu(x));
  }
  return out;
}

/// psi_f = psi + SLproj_s(sl) + pd * 1 + frame_table + camera_table[s].
/// The SL and PD terms are dropped when the corresponding switch is off.
template <class S>
typename Graph<S>::Index applyEmbeddings(Graph<S>& g, const ModelConfig& cfg,
                                         ParamStore<S>& params,
                                         typename Graph<S>::Index psi_s, int view,
                                         const Mat<S>& pd, const Mat<S>& sl_s) {
  using Index = typename Graph<S>::Index;
  const int T = cfg.num_frames;
  Index x = psi_s;
  if (cfg.use_sl) {
    if (sl_s.cols() != cfg.sl_width)
      throw ConfigError("applyEmbeddings: SL width " + std::to_string(sl_s.cols()) +
                        " does not match model N = " + std::to_string(cfg.sl_width));
    if (sl_s.rows() != T) throw DataError("applyEmbeddings: SL frame count mismatch");
    x = g.add(x, g.matmul(g.constant(sl_s),
                          g.leaf(params.at("emb.sl." + std::to_string(view) + ".w"))));
  }
  if (cfg.use_pd) {
    if (pd.rows() != cfg.num_views || pd.cols() != T)
      throw DataError("applyEmbeddings: PD shape mismatch");
    // binary per-frame cue broadcast across all d channels
    Mat<S> pd_block = pd.row(view).transpose().replicate(1, cfg.d);
    x = g.add(x, g.constant(std::move(pd_block)));
  }
  x = g.add(x, g.leaf(params.at("emb.frame")));
  x = g.addRowBroadcast(x, g.blockRows(g.leaf(params.at("emb.cam")), view, 1));
  return x;
}

/// Multi-head self-attention over the frame axis plus the position-wise
/// feed-forward, each with a residual connection (layer norm optional).
template <class S>
typename Graph<S>::Index transformerBranch(Graph<S>& g, const ModelConfig& cfg,
                                           ParamStore<S>& params,
                                           typename Graph<S>::Index psi_f, int view) {
  using Index = typename Graph<S>::Index;
  const int H = cfg.heads;
  const int dh = cfg.d / H;
  const std::string p = "tr." + std::to_string(view) + ".";

  Index q = g.addRowBroadcast(g.matmul(psi_f, g.leaf(params.at(p + "wq"))), g.leaf(params.at(p + "bq")));
  Index k = g.addRowBroadcast(g.matmul(psi_f, g.leaf(params.at(p + "wk"))), g.leaf(params.at(p + "bk")));
  Index v = g.addRowBroadcast(g.matmul(psi_f, g.leaf(params.at(p + "wv"))), g.leaf(params.at(p + "bv")));

  std::vector<Index> head_out;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  for (int hh = 0; hh < H; ++hh) {
    Index qh = g.blockCols(q, hh * dh, dh);
    Index kh = g.blockCols(k, hh * dh, dh);
    Index vh = g.blockCols(v, hh * dh, dh);
    Index att = g.softmaxRows(g.scale(g.matmul(qh, g.transpose(kh)), scale));
    head_out.push_back(g.matmul(att, vh));
  }
  Index attn = g.addRowBroadcast(g.matmul(g.concatCols(head_out), g.leaf(params.at(p + "wo"))),
                                 g.leaf(params.at(p + "bo")));
  Index res1 = g.add(psi_f, attn);
  if (cfg.layer_norm)
    res1 = g.layerNormRows(res1, g.leaf(params.at(p + "ln1.g")), g.leaf(params.at(p + "ln1.b")),
                           static_cast<S>(kLayerNormEps));

  Index ff = g.relu(g.addRowBroadcast(g.matmul(res1, g.leaf(params.at(p + "ffn1.w"))),
                                      g.leaf(params.at(p + "ffn1.b"))));
  ff = g.addRowBroadcast(g.matmul(ff, g.leaf(params.at(p + "ffn2.w"))), g.leaf(params.at(p + "ffn2.b")));
  Index res2 = g.add(res1, ff);
  if (cfg.layer_norm)
    res2 = g.layerNormRows(res2, g.leaf(params.at(p + "ln2.g")), g.leaf(params.at(p + "ln2.b")),
                           static_cast<S>(kLayerNormEps));
  return res2;
}

}  // namespace skeleton

template <class S>
struct BaseForwardNodes {
  std::vector<typename Graph<S>::Index> psi;    // per view, T x d
  std::vector<typename Graph<S>::Index> psi_f;  // per view, T x d
  std::vector<typename Graph<S>::Index> phi;    // per view, T x d
  typename Graph<S>::Index phi_fused = -1;      // T x d
  std::vector<typename Graph<S>::Index> rho;    // S heads (1 in single mode), T x d
  typename Graph<S>::Index frame_scores = -1;   // T x C_bag
  typename Graph<S>::Index bag_pred = -1;       // 1 x C_bag
};

template <class S>
struct BaseOutputs {
  std::vector<Mat<S>> rho;
  Mat<S> frame_scores;
  Mat<S> bag_pred;
  Mat<S> phi_fused;
};

/// The weak-label base model: shared conv encoder, embedding module, per-view
/// transformer branches, post-transformer view fusion, latent heads and the
/// multiple-instance bag head.
template <class S>
class BaseModel {
 public:
  using Index = typename Graph<S>::Index;

  BaseModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    skeleton::createParams(params_, cfg_);
    const int latent_heads = cfg_.latent_mode == LatentMode::per_view ? cfg_.num_views : 1;
    for (int s = 0; s < latent_heads; ++s) {
      const std::string p = "lat." + std::to_string(s) + ".";
      params_.create(p + "w", cfg_.d, cfg_.d);
      params_.create(p + "b", 1, cfg_.d);
    }
    params_.create("bag.fc1.w", cfg_.d, cfg_.bag_hidden);
    params_.create("bag.fc1.b", 1, cfg_.bag_hidden);
    params_.create("bag.fc2.w", cfg_.bag_hidden, cfg_.bag_classes);
    params_.create("bag.fc2.b", 1, cfg_.bag_classes);

    Rng rng(Rng::mix(seed, 0x6d6f64656cull));
    skeleton::initParams(params_, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }

  std::vector<Index> encodeFrames(Graph<S>& g, const std::vector<Mat<S>>& pixels) const {
    return skeleton::encodeFrames(g, cfg_, mutableParams(), pixels);
  }

  Index applyEmbeddings(Graph<S>& g, Index psi_s, int view, const Mat<S>& pd,
                        const Mat<S>& sl_s) const {
    return skeleton::applyEmbeddings(g, cfg_, mutableParams(), psi_s, view, pd, sl_s);
  }

  Index transformerBranch(Graph<S>& g, Index psi_f, int view) const {
    return skeleton::transformerBranch(g, cfg_, mutableParams(), psi_f, view);
  }

  static Index ptbFuse(Graph<S>& g, const std::vector<Index>& phi, PtbOp op) {
    switch (op) {
      case PtbOp::max: return g.viewMax(phi);
      case PtbOp::sum: return g.viewSum(phi);
      default: return g.viewMean(phi);
    }
  }

  /// Per head: width-d linear layer, then row-wise L2 normalization.
  /// per_view mode: one independent head per view on that view's phi.
  /// single mode: one head on the view-mean of phi.
  std::vector<Index> latentHeads(Graph<S>& g, const std::vector<Index>& phi) const {
    std::vector<Index> rho;
    ParamStore<S>& params = mutableParams();
    if (cfg_.latent_mode == LatentMode::per_view) {
      for (int s = 0; s < cfg_.num_views; ++s) {
        const std::string p = "lat." + std::to_string(s) + ".";
        Index x = g.addRowBroadcast(g.matmul(phi[s], g.leaf(params.at(p + "w"))),
                                    g.leaf(params.at(p + "b")));
        rho.push_back(g.l2NormalizeRows(x, static_cast<S>(kL2NormEps)));
      }
    } else {
      Index mean = g.viewMean(phi);
      Index x = g.addRowBroadcast(g.matmul(mean, g.leaf(params.at("lat.0.w"))),
                                  g.leaf(params.at("lat.0.b")));
      rho.push_back(g.l2NormalizeRows(x, static_cast<S>(kL2NormEps)));
    }
    return rho;
  }

  /// Frame scores via ReLU/sigmoid dense layers on the fused features; the
  /// bag prediction is the multiple-instance mean over the frame axis.
  std::pair<Index, Index> bagHead(Graph<S>& g, Index phi_fused) const {
    ParamStore<S>& params = mutableParams();
    Index x = g.relu(g.addRowBroadcast(g.matmul(phi_fused, g.leaf(params.at("bag.fc1.w"))),
                                       g.leaf(params.at("bag.fc1.b"))));
    Index frame_scores = g.sigmoid(g.addRowBroadcast(g.matmul(x, g.leaf(params.at("bag.fc2.w"))),
                                                     g.leaf(params.at("bag.fc2.b"))));
    Index bag_pred = g.meanRowsOrdered(frame_scores);
    return {frame_scores, bag_pred};
  }

  BaseForwardNodes<S> forward(Graph<S>& g, const SeqInput<S>& in) const {
    BaseForwardNodes<S> out;
    out.psi = encodeFrames(g, in.pixels);
    for (int s = 0; s < cfg_.num_views; ++s)
      out.psi_f.push_back(
          applyEmbeddings(g, out.psi[s], s, in.pd, cfg_.use_sl ? in.sl[s] : Mat<S>()));
    for (int s = 0; s < cfg_.num_views; ++s)
      out.phi.push_back(transformerBranch(g, out.psi_f[s], s));
    out.phi_fused = ptbFuse(g, out.phi, cfg_.ptb_op);
    out.rho = latentHeads(g, out.phi);
    auto [frame_scores, bag_pred] = bagHead(g, out.phi_fused);
    out.frame_scores = frame_scores;
    out.bag_pred = bag_pred;
    return out;
  }

  BaseOutputs<S> forwardValues(const SeqInput<S>& in) const {
    Graph<S> g;
    BaseForwardNodes<S> nodes = forward(g, in);
    BaseOutputs<S> out;
    for (Index r : nodes.rho) out.rho.push_back(g.val(r));
    out.frame_scores = g.val(nodes.frame_scores);
    out.bag_pred = g.val(nodes.bag_pred);
    out.phi_fused = g.val(nodes.phi_fused);
    return out;
  }

 private:
  // Forward passes are morally const but leaves hand out mutable gradient
  // slots; training serializes parameter mutation externally.
  ParamStore<S>& mutableParams() const { return const_cast<ParamStore<S>&>(params_); }

  ModelConfig cfg_;
  ParamStore<S> params_;
};

}  // namespace mvw
