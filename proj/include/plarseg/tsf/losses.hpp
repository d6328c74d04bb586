#pragma once

#include "plarseg/numkit/ops.hpp"
#include "plarseg/synth/sample.hpp"
#include "plarseg/tsf/pseudo_label.hpp"

namespace plarseg::tsf {

// Masked cross entropy of a K x H x W prediction against ground truth.
numkit::Tensor supervised_loss(const numkit::Tensor& pred, const synth::LabelMap& gt,
                               numkit::LossDiagnostics* diag = nullptr);

// Cross entropy against the refined teacher map; IGNORED pixels contribute nothing.
numkit::Tensor teacher_pseudo_loss(const numkit::Tensor& pred, const PseudoLabelMap& refined,
                                   numkit::LossDiagnostics* diag = nullptr);

struct CpsTerms {
  numkit::Tensor student_term;  // CE(r_s, argmax r_f)
  numkit::Tensor friend_term;   // CE(r_f, argmax r_s)
  numkit::Tensor total;
};

// Cross pseudo supervision. Targets are argmax maps and carry no gradient.
CpsTerms cps_terms(const numkit::Tensor& student_pred, const numkit::Tensor& friend_pred);
numkit::Tensor cps_loss(const numkit::Tensor& student_pred, const numkit::Tensor& friend_pred);

}  // namespace plarseg::tsf
