#include "plarseg/tsf/losses.hpp"

#include <algorithm>

namespace plarseg::tsf {

namespace nk = plarseg::numkit;

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::TEACHER: return "TEACHER";
    case Provenance::PLAR_AUTO: return "PLAR_AUTO";
    case Provenance::MANUAL: return "MANUAL";
    case Provenance::IGNORED: return "IGNORED";
  }
  return "?";
}

PseudoLabelMap::PseudoLabelMap(int h, int w)
    : height(h),
      width(w),
      cls(static_cast<std::size_t>(h) * w, 0),
      conf(static_cast<std::size_t>(h) * w, 0.0f),
      prov(static_cast<std::size_t>(h) * w, Provenance::TEACHER) {}

std::vector<std::uint8_t> PseudoLabelMap::targets() const {
  std::vector<std::uint8_t> t(cls);
  for (std::size_t i = 0; i < t.size(); ++i)
    if (prov[i] == Provenance::IGNORED) t[i] = static_cast<std::uint8_t>(nk::kIgnoreId);
  return t;
}

std::size_t PseudoLabelMap::count(Provenance p) const {
  return static_cast<std::size_t>(std::count(prov.begin(), prov.end(), p));
}

PseudoLabelMap pseudo_labels_from_logits(const nk::Tensor& logits) {
  const nk::Tensor prob = nk::softmax_channels(logits);
  const int h = prob.dim(1), w = prob.dim(2);
  PseudoLabelMap m(h, w);
  m.cls = nk::argmax_channels(prob);
  auto pd = prob.data();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < plane; ++i) m.conf[i] = pd[m.cls[i] * plane + i];
  return m;
}

nk::Tensor supervised_loss(const nk::Tensor& pred, const synth::LabelMap& gt, nk::LossDiagnostics* diag) {
  if (pred.rank() != 3 || pred.dim(1) != gt.height || pred.dim(2) != gt.width)
    throw nk::DimensionError("supervised_loss: prediction and label sizes differ");
  return nk::softmax_cross_entropy_masked(pred, gt.ids, nk::kIgnoreId, diag);
}

nk::Tensor teacher_pseudo_loss(const nk::Tensor& pred, const PseudoLabelMap& refined, nk::LossDiagnostics* diag) {
  if (pred.rank() != 3 || pred.dim(1) != refined.height || pred.dim(2) != refined.width)
    throw nk::DimensionError("teacher_pseudo_loss: prediction and pseudo-label sizes differ");
  const auto t = refined.targets();
  return nk::softmax_cross_entropy_masked(pred, t, nk::kIgnoreId, diag);
}

CpsTerms cps_terms(const nk::Tensor& student_pred, const nk::Tensor& friend_pred) {
  if (student_pred.shape() != friend_pred.shape()) throw nk::DimensionError("cps_loss: prediction shapes differ");
  // argmax reads values only, so the targets are detached by construction.
  const auto from_friend = nk::argmax_channels(friend_pred);
  const auto from_student = nk::argmax_channels(student_pred);
  CpsTerms t;
  t.student_term = nk::softmax_cross_entropy_masked(student_pred, from_friend);
  t.friend_term = nk::softmax_cross_entropy_masked(friend_pred, from_student);
  t.total = nk::weighted_sum({t.student_term, t.friend_term}, {1.0f, 1.0f});
  return t;
}

nk::Tensor cps_loss(const nk::Tensor& student_pred, const nk::Tensor& friend_pred) {
  return cps_terms(student_pred, friend_pred).total;
}

}  // namespace plarseg::tsf
