#pragma once

#include <array>
#include <vector>

#include "diffguide/tensor.hpp"

namespace diffguide {

using Box = std::array<double, 4>;  // x1, y1, x2, y2 in image pixels

struct BoxList {
  std::vector<Box> boxes;
  std::vector<int> labels;      // optional, empty or size N
  std::vector<double> scores;   // optional, empty or size N

  size_t size() const { return boxes.size(); }
  bool empty() const { return boxes.empty(); }
};

inline double box_area(const Box& b) {
  return std::max(0.0, b[2] - b[0]) * std::max(0.0, b[3] - b[1]);
}

inline double iou(const Box& a, const Box& b) {
  double ix1 = std::max(a[0], b[0]), iy1 = std::max(a[1], b[1]);
  double ix2 = std::min(a[2], b[2]), iy2 = std::min(a[3], b[3]);
  double inter = std::max(0.0, ix2 - ix1) * std::max(0.0, iy2 - iy1);
  double uni = box_area(a) + box_area(b) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline std::vector<std::vector<double>> iou_matrix(const BoxList& a,
                                                   const BoxList& b) {
  std::vector<std::vector<double>> m(a.size(), std::vector<double>(b.size()));
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < b.size(); ++j) m[i][j] = iou(a.boxes[i], b.boxes[j]);
  return m;
}

inline Box clip_box(const Box& b, double w, double h) {
  return {std::clamp(b[0], 0.0, w), std::clamp(b[1], 0.0, h),
          std::clamp(b[2], 0.0, w), std::clamp(b[3], 0.0, h)};
}

// deltas are (dx, dy, dw, dh) = ((gx-ax)/aw, (gy-ay)/ah, log(gw/aw), log(gh/ah))
inline std::array<double, 4> encode_box(const Box& gt, const Box& anchor) {
  double aw = anchor[2] - anchor[0], ah = anchor[3] - anchor[1];
  if (aw <= 0.0 || ah <= 0.0)
    throw std::invalid_argument("encode_box: degenerate anchor");
  double ax = anchor[0] + 0.5 * aw, ay = anchor[1] + 0.5 * ah;
  double gw = gt[2] - gt[0], gh = gt[3] - gt[1];
  if (gw <= 0.0 || gh <= 0.0)
    throw std::invalid_argument("encode_box: degenerate box");
  double gx = gt[0] + 0.5 * gw, gy = gt[1] + 0.5 * gh;
  return {(gx - ax) / aw, (gy - ay) / ah, std::log(gw / aw), std::log(gh / ah)};
}

inline Box decode_box(const std::array<double, 4>& d, const Box& anchor) {
  double aw = anchor[2] - anchor[0], ah = anchor[3] - anchor[1];
  if (aw <= 0.0 || ah <= 0.0)
    throw std::invalid_argument("decode_box: degenerate anchor");
  double ax = anchor[0] + 0.5 * aw, ay = anchor[1] + 0.5 * ah;
  // clamp log-scale deltas so an early-training head cannot overflow exp
  double dw = std::clamp(d[2], -8.0, 8.0), dh = std::clamp(d[3], -8.0, 8.0);
  double cx = ax + d[0] * aw, cy = ay + d[1] * ah;
  double w = aw * std::exp(dw), h = ah * std::exp(dh);
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

inline std::vector<std::array<double, 4>> encode_boxes(const BoxList& gt,
                                                       const BoxList& anchors) {
  if (gt.size() != anchors.size())
    throw std::invalid_argument("encode_boxes: count mismatch");
  std::vector<std::array<double, 4>> out(gt.size());
  for (size_t i = 0; i < gt.size(); ++i)
    out[i] = encode_box(gt.boxes[i], anchors.boxes[i]);
  return out;
}

inline BoxList decode_boxes(const std::vector<std::array<double, 4>>& deltas,
                            const BoxList& anchors) {
  if (deltas.size() != anchors.size())
    throw std::invalid_argument("decode_boxes: count mismatch");
  BoxList out;
  out.boxes.resize(deltas.size());
  for (size_t i = 0; i < deltas.size(); ++i)
    out.boxes[i] = decode_box(deltas[i], anchors.boxes[i]);
  return out;
}

// Greedy NMS. Input indices must reference boxes/scores; returns kept
// indices in descending score order.
inline std::vector<int> nms(const std::vector<Box>& boxes,
                            const std::vector<double>& scores, double iou_thr) {
  std::vector<int> order(boxes.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<int> keep;
  std::vector<bool> removed(boxes.size(), false);
  for (int i : order) {
    if (removed[i]) continue;
    keep.push_back(i);
    for (int j : order)
      if (!removed[j] && j != i && iou(boxes[i], boxes[j]) > iou_thr)
        removed[j] = true;
  }
  return keep;
}

}  // namespace diffguide
