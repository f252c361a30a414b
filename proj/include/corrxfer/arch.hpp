#pragma once

#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "corrxfer/nn_kernels.hpp"

// Architecture descriptions for every network in the project. Presets follow
// the compact layer-string notation (c7s1-64, d128, R256, u128, C64, c-8-1-32,
// f-512) so the reference topologies can be written down verbatim and the
// reduced desk-scale variants stay in the same vocabulary.

namespace corrxfer {

enum class LayerKind {
  Conv,        // k, stride, filters, pad, pad_mode
  ConvT,       // k=3 s=2 pad=1 outpad=1, filters
  FC,          // out_features
  BatchNorm,
  ReLU,
  LeakyReLU,   // slope 0.2
  Sigmoid,
  ResOpen,     // start of residual block (saves input)
  ResClose,    // adds saved input
  ActionInject,  // appends `extra` constant channels broadcast spatially
  Rotation,    // single learnable angle, bilinear resampling
  Flatten,
};

struct LayerSpec {
  LayerKind kind;
  int k = 0;
  int stride = 1;
  int filters = 0;
  int pad = 0;
  PadMode pad_mode = PadMode::Zero;
  int extra = 0;  // ActionInject channel count

  bool operator==(const LayerSpec&) const = default;
};

struct ArchitectureSpec {
  std::string name;
  int in_channels = 0;
  int in_h = 0;
  int in_w = 0;
  int extra_inputs = 0;  // width of the secondary input vector (one-hot actions)
  std::vector<LayerSpec> layers;

  bool operator==(const ArchitectureSpec&) const = default;
};

// Shapes threaded through the layer list; validates chaining and resolves the
// flatten dimension for FC layers.
struct ShapeCursor {
  bool spatial = true;
  int c = 0, h = 0, w = 0;  // spatial
  int features = 0;         // flat
};

inline ShapeCursor output_shape(const ArchitectureSpec& a) {
  ShapeCursor s{true, a.in_channels, a.in_h, a.in_w, 0};
  std::vector<ShapeCursor> res_stack;
  for (const auto& l : a.layers) {
    switch (l.kind) {
      case LayerKind::Conv: {
        if (!s.spatial) throw std::invalid_argument(a.name + ": conv after flatten");
        const int h = s.h + 2 * l.pad, w = s.w + 2 * l.pad;
        if (h < l.k || w < l.k) throw std::invalid_argument(a.name + ": conv input too small");
        s.c = l.filters;
        s.h = conv_out_dim(h, l.k, l.stride);
        s.w = conv_out_dim(w, l.k, l.stride);
        break;
      }
      case LayerKind::ConvT:
        s.c = l.filters;
        s.h = convt_out_dim(s.h, 3, 2, 1, 1);
        s.w = convt_out_dim(s.w, 3, 2, 1, 1);
        break;
      case LayerKind::FC:
        if (s.spatial) {
          s.features = s.c * s.h * s.w;
          s.spatial = false;
        }
        s.features = l.filters;
        break;
      case LayerKind::Flatten:
        s.features = s.c * s.h * s.w;
        s.spatial = false;
        break;
      case LayerKind::ResOpen:
        res_stack.push_back(s);
        break;
      case LayerKind::ResClose: {
        if (res_stack.empty()) throw std::invalid_argument(a.name + ": unbalanced residual");
        const ShapeCursor saved = res_stack.back();
        res_stack.pop_back();
        if (saved.c != s.c || saved.h != s.h || saved.w != s.w)
          throw std::invalid_argument(a.name + ": residual shape mismatch");
        break;
      }
      case LayerKind::ActionInject:
        s.c += l.extra;
        break;
      default:
        break;  // activations / norms keep the shape
    }
  }
  if (!res_stack.empty()) throw std::invalid_argument(a.name + ": unbalanced residual");
  return s;
}

// Parameter layout, flat order: for each layer with parameters, weights then
// biases (conv/convT/fc), gamma then beta (batchnorm), angle (rotation).
struct ParamSlice {
  int layer_index;
  std::vector<int> w_shape;  // empty if none
  std::vector<int> b_shape;
  std::size_t w_offset = 0, b_offset = 0;
  bool w_is_kernel = false;  // true for conv/fc weight matrices (N(0,0.02) init)
  std::size_t buf_offset = 0;  // batchnorm running stats (mean then var)
  std::size_t buf_count = 0;
};

struct ParamLayout {
  std::vector<ParamSlice> slices;
  std::size_t param_count = 0;
  std::size_t buffer_count = 0;
};

inline ParamLayout layout_params(const ArchitectureSpec& a) {
  ParamLayout out;
  ShapeCursor s{true, a.in_channels, a.in_h, a.in_w, 0};
  std::vector<ShapeCursor> res_stack;
  std::size_t at = 0, bat = 0;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& l = a.layers[i];
    ParamSlice ps;
    ps.layer_index = static_cast<int>(i);
    switch (l.kind) {
      case LayerKind::Conv: {
        ps.w_shape = {l.filters, s.c, l.k, l.k};
        ps.b_shape = {l.filters};
        ps.w_is_kernel = true;
        const int h = s.h + 2 * l.pad, w = s.w + 2 * l.pad;
        s.c = l.filters;
        s.h = conv_out_dim(h, l.k, l.stride);
        s.w = conv_out_dim(w, l.k, l.stride);
        break;
      }
      case LayerKind::ConvT:
        ps.w_shape = {s.c, l.filters, 3, 3};
        ps.b_shape = {l.filters};
        ps.w_is_kernel = true;
        s.c = l.filters;
        s.h = convt_out_dim(s.h, 3, 2, 1, 1);
        s.w = convt_out_dim(s.w, 3, 2, 1, 1);
        break;
      case LayerKind::FC: {
        if (s.spatial) {
          s.features = s.c * s.h * s.w;
          s.spatial = false;
        }
        ps.w_shape = {l.filters, s.features};
        ps.b_shape = {l.filters};
        ps.w_is_kernel = true;
        s.features = l.filters;
        break;
      }
      case LayerKind::BatchNorm:
        ps.w_shape = {s.c};  // gamma
        ps.b_shape = {s.c};  // beta
        ps.buf_offset = bat;
        ps.buf_count = static_cast<std::size_t>(2 * s.c);  // running mean, running var
        bat += ps.buf_count;
        break;
      case LayerKind::Rotation:
        ps.w_shape = {1};
        break;
      case LayerKind::Flatten:
        s.features = s.c * s.h * s.w;
        s.spatial = false;
        break;
      case LayerKind::ResOpen:
        res_stack.push_back(s);
        break;
      case LayerKind::ResClose:
        res_stack.pop_back();
        break;
      case LayerKind::ActionInject:
        s.c += l.extra;
        break;
      default:
        break;
    }
    if (!ps.w_shape.empty() || !ps.b_shape.empty()) {
      if (!ps.w_shape.empty()) {
        ps.w_offset = at;
        at += Tensor<float>::count(ps.w_shape);
      }
      if (!ps.b_shape.empty()) {
        ps.b_offset = at;
        at += Tensor<float>::count(ps.b_shape);
      }
      out.slices.push_back(ps);
    }
  }
  out.param_count = at;
  out.buffer_count = bat;
  return out;
}

// ---------------------------------------------------------------------------
// layer-string parsing

namespace detail {

inline int parse_int(const std::string& s, const std::string& ctx) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size() || v <= 0) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw std::invalid_argument("bad layer token near '" + ctx + "'");
  }
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, sep)) out.push_back(tok);
  return out;
}

inline void push_conv(std::vector<LayerSpec>& ls, int k, int stride, int f, int pad, PadMode pm) {
  ls.push_back({LayerKind::Conv, k, stride, f, pad, pm, 0});
}

}  // namespace detail

enum class NetStyle { Generator, Discriminator, QNet, Model };

/// Expands the compact layer notation into a LayerSpec sequence.
///   c{k}s1-{f}  k x k conv stride 1, reflect pad, BN+ReLU (generator body)
///   d{f}        3x3 conv stride 2, zero pad 1, BN+ReLU
///   R{f}        residual block of two 3x3 convs (reflect pad, BN, ReLU inside)
///   u{f}        3x3 fractional-stride conv (x2 upsample), BN+ReLU
///   C{f}        4x4 conv stride 2, zero pad 1, BN+LeakyReLU(0.2)
///   c-{k}-{s}-{f}  valid conv + ReLU (no norm)
///   f-{o}       fully connected + ReLU
///   A{e}        one-hot action injection (e broadcast channels)
/// Style adjusts the final layer: generators end in a sigmoid conv (frames are
/// [0,1]); environment models end in a linear conv (predictions are clamped
/// downstream); discriminators get a final 1-filter patch-logit conv appended;
/// Q networks leave the last FC linear.
inline std::vector<LayerSpec> parse_layer_string(const std::string& text, NetStyle style,
                                                 int out_channels) {
  std::vector<LayerSpec> ls;
  const auto tokens = detail::split(text, ',');
  if (tokens.empty()) throw std::invalid_argument("empty layer string");
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& t = tokens[i];
    const bool last = (i + 1 == tokens.size());
    if (t.empty()) throw std::invalid_argument("empty layer token");
    if (t[0] == 'c' && t.size() > 1 && t[1] == '-') {
      const auto parts = detail::split(t.substr(2), '-');
      if (parts.size() != 3) throw std::invalid_argument("bad conv token '" + t + "'");
      const int k = detail::parse_int(parts[0], t);
      const int s = detail::parse_int(parts[1], t);
      const int f = detail::parse_int(parts[2], t);
      detail::push_conv(ls, k, s, f, 0, PadMode::Zero);
      ls.push_back({LayerKind::ReLU});
    } else if (t[0] == 'c') {
      const auto dash = t.find('-');
      if (dash == std::string::npos || t.find('s') == std::string::npos)
        throw std::invalid_argument("bad token '" + t + "'");
      const auto spos = t.find('s');
      const int k = detail::parse_int(t.substr(1, spos - 1), t);
      const int stride = detail::parse_int(t.substr(spos + 1, dash - spos - 1), t);
      int f = detail::parse_int(t.substr(dash + 1), t);
      const bool head = (style == NetStyle::Generator || style == NetStyle::Model) && last;
      if (head) f = out_channels;
      detail::push_conv(ls, k, stride, f, (k - 1) / 2, PadMode::Reflect);
      if (head) {
        if (style == NetStyle::Generator) ls.push_back({LayerKind::Sigmoid});
        // model head stays linear; predictions are clamped by the caller
      } else {
        ls.push_back({LayerKind::BatchNorm});
        ls.push_back({LayerKind::ReLU});
      }
    } else if (t[0] == 'd') {
      const int f = detail::parse_int(t.substr(1), t);
      detail::push_conv(ls, 3, 2, f, 1, PadMode::Zero);
      ls.push_back({LayerKind::BatchNorm});
      ls.push_back({LayerKind::ReLU});
    } else if (t[0] == 'R') {
      const int f = detail::parse_int(t.substr(1), t);
      ls.push_back({LayerKind::ResOpen});
      detail::push_conv(ls, 3, 1, f, 1, PadMode::Reflect);
      ls.push_back({LayerKind::BatchNorm});
      ls.push_back({LayerKind::ReLU});
      detail::push_conv(ls, 3, 1, f, 1, PadMode::Reflect);
      ls.push_back({LayerKind::BatchNorm});
      ls.push_back({LayerKind::ResClose});
    } else if (t[0] == 'u') {
      const int f = detail::parse_int(t.substr(1), t);
      ls.push_back({LayerKind::ConvT, 3, 2, f, 1, PadMode::Zero, 0});
      ls.push_back({LayerKind::BatchNorm});
      ls.push_back({LayerKind::ReLU});
    } else if (t[0] == 'C') {
      const int f = detail::parse_int(t.substr(1), t);
      detail::push_conv(ls, 4, 2, f, 1, PadMode::Zero);
      ls.push_back({LayerKind::BatchNorm});
      ls.push_back({LayerKind::LeakyReLU});
    } else if (t[0] == 'f' && t.size() > 1 && t[1] == '-') {
      const int o = detail::parse_int(t.substr(2), t);
      ls.push_back({LayerKind::FC, 0, 1, o});
      if (!(style == NetStyle::QNet && last)) ls.push_back({LayerKind::ReLU});
    } else if (t[0] == 'A') {
      const int e = detail::parse_int(t.substr(1), t);
      ls.push_back({LayerKind::ActionInject, 0, 1, 0, 0, PadMode::Zero, e});
    } else {
      throw std::invalid_argument("unknown layer token '" + t + "'");
    }
  }
  if (style == NetStyle::Discriminator) {
    detail::push_conv(ls, 4, 1, 1, 1, PadMode::Zero);  // patch logit map
  }
  return ls;
}

// ---------------------------------------------------------------------------
// presets

inline constexpr int kStateChannels = 4;  // 4 stacked grayscale frames

// Reference layer strings. Output channel counts adapt to the 4-channel
// grayscale frame stacks used here (the sources describe 3-channel RGB).
inline constexpr const char* kPaperGeneratorString =
    "c7s1-64,d128,d256,R256,R256,R256,R256,R256,R256,R256,R256,R256,u128,u64,c7s1-4";
inline constexpr const char* kPaperModelString =
    "c7s1-64,d128,d256,R256,R256,R256,R256,A6,R262,R262,R262,R262,R262,u128,u64,c7s1-4";
inline constexpr const char* kPaperDiscriminatorString = "C64,C128,C256,C512";
inline constexpr const char* kPaperQString = "c-8-1-32,c-4-2-64,c-3-1-64,f-512,f-6";

// Desk-scale variants for 32x32 frames: same topology vocabulary with reduced
// widths, one downsampling stage and smaller kernels, sized so CPU training of
// the full pipeline stays in the minutes range.
inline constexpr const char* kDeskGeneratorString = "c5s1-8,d16,R16,R16,u8,c5s1-4";
inline constexpr const char* kDeskModelString = "c5s1-8,d16,R16,A6,R22,u8,c5s1-4";
inline constexpr const char* kDeskDiscriminatorString = "C16,C32";
inline constexpr const char* kDeskQString = "c-4-2-8,c-3-2-16,f-64,f-6";

inline ArchitectureSpec preset(const std::string& name, int frame_size = 32) {
  ArchitectureSpec a;
  a.name = name;
  a.in_channels = kStateChannels;
  a.in_h = frame_size;
  a.in_w = frame_size;
  auto build = [&](const char* s, NetStyle style) {
    a.layers = parse_layer_string(s, style, kStateChannels);
  };
  if (name == "paper-generator") {
    build(kPaperGeneratorString, NetStyle::Generator);
  } else if (name == "paper-model") {
    build(kPaperModelString, NetStyle::Model);
    a.extra_inputs = 6;
  } else if (name == "paper-discriminator") {
    a.layers = parse_layer_string(kPaperDiscriminatorString, NetStyle::Discriminator, 1);
  } else if (name == "paper-q") {
    a.layers = parse_layer_string(kPaperQString, NetStyle::QNet, 6);
  } else if (name == "desk-generator") {
    build(kDeskGeneratorString, NetStyle::Generator);
  } else if (name == "desk-model") {
    build(kDeskModelString, NetStyle::Model);
    a.extra_inputs = 6;
  } else if (name == "desk-discriminator") {
    a.layers = parse_layer_string(kDeskDiscriminatorString, NetStyle::Discriminator, 1);
  } else if (name == "desk-q") {
    a.layers = parse_layer_string(kDeskQString, NetStyle::QNet, 6);
  } else if (name == "rotation-generator") {
    a.layers = {{LayerKind::Rotation}};
  } else {
    throw std::invalid_argument("unknown preset '" + name + "'");
  }
  output_shape(a);  // validates chaining
  return a;
}

inline int count_residual_blocks(const ArchitectureSpec& a) {
  int n = 0;
  for (const auto& l : a.layers)
    if (l.kind == LayerKind::ResOpen) ++n;
  return n;
}

}  // namespace corrxfer
