#include "damnet/gradcam.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <queue>

#include <nlohmann/json.hpp>

#include "damnet/data.hpp"

using json = nlohmann::json;

namespace damnet {

static const char* kGradTaps[] = {"stem.out", "rb_a.out", "rb_b.out", "dam1.out", "rb_c.out", "dam2.out"};

AttributionMap gradcam(Backbone& model, const Tensor& x, int target_class, const std::string& layer_name) {
  if (x.rank() != 5 || x.dims[0] != 1)
    throw std::invalid_argument("gradcam: expected a single volume [1, C, D, H, W], got " + shape_str(x.dims));
  if (target_class < 0 || target_class >= model.cfg.num_classes)
    throw std::invalid_argument("gradcam: target class " + std::to_string(target_class) + " outside [0, " +
                                std::to_string(model.cfg.num_classes) + ")");
  bool known = false;
  for (const char* t : kGradTaps) known = known || layer_name == t;
  if (!known) {
    std::string avail;
    for (const char* t : kGradTaps) avail += std::string(avail.empty() ? "" : ", ") + t;
    throw std::invalid_argument("gradcam: unknown layer '" + layer_name + "'; available taps: " + avail);
  }

  TapMap<float> taps;
  model.forward_with_taps(x, /*train=*/false, taps);
  Tensor dlogits({1, model.cfg.num_classes});
  dlogits.at2(0, target_class) = 1.0f;
  model.zero_grads();
  TapMap<float> grad_taps;
  model.backward(dlogits, &grad_taps);
  model.zero_grads();  // attribution must not leave gradients behind

  const Tensor& act = taps.at(layer_name);
  const Tensor& grad = grad_taps.at(layer_name);
  const int64_t C = act.dims[1];
  const int64_t d = act.dims[2], h = act.dims[3], w = act.dims[4];
  const int64_t V = d * h * w;

  // alpha_k = spatial mean of d(logit)/d(activation_k); map = relu(sum_k alpha_k * A_k)
  Tensor raw({d, h, w});
  for (int64_t c = 0; c < C; ++c) {
    double alpha = 0.0;
    for (int64_t i = 0; i < V; ++i) alpha += static_cast<double>(grad[c * V + i]);
    alpha /= static_cast<double>(V);
    for (int64_t i = 0; i < V; ++i) raw[i] += static_cast<float>(alpha * static_cast<double>(act[c * V + i]));
  }
  for (int64_t i = 0; i < V; ++i) raw[i] = std::max(raw[i], 0.0f);

  Tensor up = trilinear_upsample(raw, x.dims[2], x.dims[3], x.dims[4]);
  float lo = up[0], hi = up[0];
  for (float v : up.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi > lo) {
    for (float& v : up.data) v = (v - lo) / (hi - lo);
  } else {
    std::fill(up.data.begin(), up.data.end(), 0.0f);  // identically-zero (or constant) map stays 0
  }

  AttributionMap out;
  out.values = std::move(up);
  out.layer = layer_name;
  out.target_class = target_class;
  out.input_dims = {x.dims[2], x.dims[3], x.dims[4]};
  return out;
}

Tensor trilinear_upsample(const Tensor& m, int64_t D, int64_t H, int64_t W) {
  if (m.rank() != 3) throw std::invalid_argument("trilinear_upsample: expected rank-3 tensor, got " + shape_str(m.dims));
  const int64_t d = m.dims[0], h = m.dims[1], w = m.dims[2];
  Tensor out({D, H, W});
  // align-corners: output i maps to source i * (in-1) / (out-1)
  auto src = [](int64_t i, int64_t out_n, int64_t in_n) {
    if (out_n <= 1 || in_n <= 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(in_n - 1) / static_cast<double>(out_n - 1);
  };
  for (int64_t id = 0; id < D; ++id) {
    const double fd = src(id, D, d);
    const int64_t d0 = static_cast<int64_t>(fd), d1 = std::min(d0 + 1, d - 1);
    const double td = fd - static_cast<double>(d0);
    for (int64_t ih = 0; ih < H; ++ih) {
      const double fh = src(ih, H, h);
      const int64_t h0 = static_cast<int64_t>(fh), h1 = std::min(h0 + 1, h - 1);
      const double th = fh - static_cast<double>(h0);
      for (int64_t iw = 0; iw < W; ++iw) {
        const double fw = src(iw, W, w);
        const int64_t w0 = static_cast<int64_t>(fw), w1 = std::min(w0 + 1, w - 1);
        const double tw = fw - static_cast<double>(w0);
        const double c000 = m.at3(d0, h0, w0), c001 = m.at3(d0, h0, w1);
        const double c010 = m.at3(d0, h1, w0), c011 = m.at3(d0, h1, w1);
        const double c100 = m.at3(d1, h0, w0), c101 = m.at3(d1, h0, w1);
        const double c110 = m.at3(d1, h1, w0), c111 = m.at3(d1, h1, w1);
        const double c00 = c000 + (c001 - c000) * tw;
        const double c01 = c010 + (c011 - c010) * tw;
        const double c10 = c100 + (c101 - c100) * tw;
        const double c11 = c110 + (c111 - c110) * tw;
        const double c0 = c00 + (c01 - c00) * th;
        const double c1 = c10 + (c11 - c10) * th;
        out.at3(id, ih, iw) = static_cast<float>(c0 + (c1 - c0) * td);
      }
    }
  }
  return out;
}

double localization_score(const AttributionMap& map, const Tensor& roi_mask, double top_fraction) {
  if (top_fraction <= 0 || top_fraction > 1) throw std::invalid_argument("localization_score: top_fraction must be in (0, 1]");
  if (roi_mask.dims != map.values.dims)
    throw std::invalid_argument("localization_score: mask " + shape_str(roi_mask.dims) + " vs map " +
                                shape_str(map.values.dims));
  int64_t roi = 0;
  for (float v : roi_mask.data) roi += v > 0.5f ? 1 : 0;
  if (roi == 0) throw std::invalid_argument("localization_score: empty ROI mask");

  const int64_t total = map.values.numel();
  const int64_t k = std::max<int64_t>(1, llround(top_fraction * static_cast<double>(total)));
  std::vector<int64_t> order(static_cast<size_t>(total));
  std::iota(order.begin(), order.end(), int64_t{0});
  std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    if (map.values[a] != map.values[b]) return map.values[a] > map.values[b];
    return a < b;  // ties break to earlier row-major index
  });
  int64_t inside = 0;
  for (int64_t i = 0; i < k; ++i)
    if (roi_mask[order[static_cast<size_t>(i)]] > 0.5f) ++inside;
  return static_cast<double>(inside) / static_cast<double>(k);
}

// Connected components (6-neighborhood) of the top 2% voxels, strongest first.
static json top_regions(const Tensor& map) {
  const int64_t D = map.dims[0], H = map.dims[1], W = map.dims[2];
  const int64_t total = map.numel();
  const int64_t k = std::max<int64_t>(1, total / 50);
  std::vector<int64_t> order(static_cast<size_t>(total));
  std::iota(order.begin(), order.end(), int64_t{0});
  std::nth_element(order.begin(), order.begin() + (k - 1), order.end(),
                   [&](int64_t a, int64_t b) { return map[a] > map[b]; });
  std::vector<char> in_top(static_cast<size_t>(total), 0);
  for (int64_t i = 0; i < k; ++i) in_top[static_cast<size_t>(order[static_cast<size_t>(i)])] = 1;

  struct Region {
    double mass = 0.0, cd = 0.0, ch = 0.0, cw = 0.0;
  };
  std::vector<Region> regions;
  std::vector<char> seen(static_cast<size_t>(total), 0);
  for (int64_t s = 0; s < total; ++s) {
    if (!in_top[static_cast<size_t>(s)] || seen[static_cast<size_t>(s)]) continue;
    Region reg;
    std::queue<int64_t> q;
    q.push(s);
    seen[static_cast<size_t>(s)] = 1;
    while (!q.empty()) {
      const int64_t v = q.front();
      q.pop();
      const int64_t d = v / (H * W), h = (v / W) % H, w = v % W;
      const double val = static_cast<double>(map[v]);
      reg.mass += val;
      reg.cd += val * static_cast<double>(d);
      reg.ch += val * static_cast<double>(h);
      reg.cw += val * static_cast<double>(w);
      const int64_t nd[6] = {d - 1, d + 1, d, d, d, d};
      const int64_t nh[6] = {h, h, h - 1, h + 1, h, h};
      const int64_t nw[6] = {w, w, w, w, w - 1, w + 1};
      for (int t = 0; t < 6; ++t) {
        if (nd[t] < 0 || nd[t] >= D || nh[t] < 0 || nh[t] >= H || nw[t] < 0 || nw[t] >= W) continue;
        const int64_t u = (nd[t] * H + nh[t]) * W + nw[t];
        if (in_top[static_cast<size_t>(u)] && !seen[static_cast<size_t>(u)]) {
          seen[static_cast<size_t>(u)] = 1;
          q.push(u);
        }
      }
    }
    regions.push_back(reg);
  }
  std::sort(regions.begin(), regions.end(), [](const Region& a, const Region& b) { return a.mass > b.mass; });
  json arr = json::array();
  for (size_t i = 0; i < regions.size() && i < 5; ++i) {
    const Region& r = regions[i];
    const double m = r.mass > 0 ? r.mass : 1.0;
    arr.push_back({{"center_voxel", {llround(r.cd / m), llround(r.ch / m), llround(r.cw / m)}}, {"mass", r.mass}});
  }
  return arr;
}

void write_attribution(const AttributionMap& map, const std::string& rvol_path, const std::string& json_path,
                       const std::string& input_path) {
  write_volume(rvol_path, map.values);
  json j = {{"layer", map.layer},
            {"target_class", map.target_class},
            {"input_path", input_path},
            {"top_regions", top_regions(map.values)}};
  std::ofstream f(json_path);
  if (!f) throw std::runtime_error("write_attribution: cannot open '" + json_path + "'");
  f << j.dump(2) << "\n";
}

static void write_pgm(const std::string& path, const std::vector<int>& pix, int64_t width, int64_t height) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_pgm_slices: cannot open '" + path + "'");
  f << "P2\n" << width << " " << height << "\n255\n";
  for (int64_t r = 0; r < height; ++r) {
    for (int64_t c = 0; c < width; ++c) f << pix[static_cast<size_t>(r * width + c)] << (c + 1 == width ? "" : " ");
    f << "\n";
  }
}

void write_pgm_slices(const AttributionMap& map, const std::string& prefix) {
  const Tensor& t = map.values;
  const int64_t D = t.dims[0], H = t.dims[1], W = t.dims[2];
  auto level = [](float v) { return static_cast<int>(std::lround(255.0 * std::clamp(v, 0.0f, 1.0f))); };

  std::vector<int> pix(static_cast<size_t>(H * W));
  for (int64_t h = 0; h < H; ++h)
    for (int64_t w = 0; w < W; ++w) pix[static_cast<size_t>(h * W + w)] = level(t.at3(D / 2, h, w));
  write_pgm(prefix + "_axial.pgm", pix, W, H);

  pix.assign(static_cast<size_t>(D * W), 0);
  for (int64_t d = 0; d < D; ++d)
    for (int64_t w = 0; w < W; ++w) pix[static_cast<size_t>(d * W + w)] = level(t.at3(d, H / 2, w));
  write_pgm(prefix + "_coronal.pgm", pix, W, D);

  pix.assign(static_cast<size_t>(D * H), 0);
  for (int64_t d = 0; d < D; ++d)
    for (int64_t h = 0; h < H; ++h) pix[static_cast<size_t>(d * H + h)] = level(t.at3(d, h, W / 2));
  write_pgm(prefix + "_sagittal.pgm", pix, H, D);
}

}  // namespace damnet
