#pragma once

#include <map>
#include <string>
#include <vector>

#include "stal3d/autograd.hpp"
#include "stal3d/detector.hpp"

namespace stal3d {

enum class Domain { Source, Target };
const char* to_string(Domain d);

/// Detection loss terms that can be routed per domain.
enum class Term : unsigned {
  Cls = 1u << 0,
  Reg = 1u << 1,
  RegFiltered = 1u << 2,
  Iou = 1u << 3,
  Dir = 1u << 4,
};
const char* to_string(Term t);
inline constexpr Term kAllTerms[] = {Term::Cls, Term::Reg, Term::RegFiltered, Term::Iou, Term::Dir};

class TermSet {
 public:
  constexpr TermSet() = default;
  constexpr TermSet(std::initializer_list<Term> terms) {
    for (Term t : terms) bits_ |= static_cast<unsigned>(t);
  }
  constexpr bool contains(Term t) const { return (bits_ & static_cast<unsigned>(t)) != 0; }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr TermSet with(Term t) const { return TermSet(bits_ | static_cast<unsigned>(t)); }
  constexpr TermSet without(Term t) const { return TermSet(bits_ & ~static_cast<unsigned>(t)); }
  /// Both the plain and the scale-filtered regression in one domain is contradictory.
  constexpr bool valid() const { return !(contains(Term::Reg) && contains(Term::RegFiltered)); }
  constexpr unsigned bits() const { return bits_; }
  constexpr bool operator==(const TermSet&) const = default;

  std::string to_string() const;
  static TermSet parse(const std::vector<std::string>& names);

 private:
  constexpr explicit TermSet(unsigned bits) : bits_(bits) {}
  unsigned bits_ = 0;
};

struct LossConfig {
  double lambda_cls = 1.0;  // focal classification
  double lambda_reg = 2.0;  // (filtered) box regression
  double lambda_iou = 1.0;  // IoU prediction
  double lambda_dir = 0.2;  // direction classification
  double lambda_rs = 1.0;   // region-suppressed adversarial
  double alpha = 0.25;
  double gamma = 2.0;
  TermSet source_terms{Term::Cls, Term::RegFiltered, Term::Iou, Term::Dir};
  TermSet target_terms{Term::RegFiltered, Term::Iou, Term::Dir};

  double weight(Term t) const;
  void validate() const;
};

/// Loss-term routing of a full supervised detector (pre-training).
inline constexpr TermSet kSupervisedTerms{Term::Cls, Term::Reg, Term::Iou, Term::Dir};

// ---------------------------------------------------------------------------
// Scalar reference forms

inline constexpr double kProbClamp = 1e-7;

double focal_loss(double p, int y, double alpha, double gamma);
double smooth_l1(double x);

// ---------------------------------------------------------------------------
// Tape ops. All are normalized by max(1, number of positive anchors).

/// Sigmoid focal loss over all non-ignored anchors.
ag::Tensor focal_loss(const ag::Tensor& logits, const std::vector<std::int8_t>& targets,
                      double alpha, double gamma);

/// Smooth-L1 between regression outputs [.., 7] and targets on positive anchors.
/// With `filtered`, only (x, y, z, theta) contribute.
ag::Tensor reg_loss(const ag::Tensor& pred, const Assignment& assignment, bool filtered);

/// Softmax cross-entropy of the direction bins on positive anchors.
ag::Tensor dir_loss(const ag::Tensor& dir_logits, const Assignment& assignment);

/// Smooth-L1 between predicted IoU (already in [0,1]) and measured IoU on positives.
ag::Tensor iou_loss(const ag::Tensor& iou_pred, const std::vector<double>& iou_target,
                    const Assignment& assignment);

/// Detection terms of one domain, computed for everything in `terms`.
std::map<Term, ag::Tensor> detection_terms(const DetectorOutputs& out, const Assignment& assignment,
                                           const std::vector<double>& iou_target, TermSet terms,
                                           const LossConfig& config);

// ---------------------------------------------------------------------------

struct LossEntry {
  std::string term;
  Domain domain;
  double weight;
  double value;
};

struct LossReport {
  std::vector<LossEntry> entries;
  double total = 0;

  double value(const std::string& term, Domain d) const;
  bool has(const std::string& term, Domain d) const;
};

struct DomainTerms {
  Domain domain;
  TermSet routing;
  std::map<Term, ag::Tensor> detection;
  ag::Tensor rs;  // empty when adversarial learning is off
};

struct Objective {
  ag::Tensor total;
  LossReport report;
};

/// Weighted sum over every routed term of every domain plus lambda_rs * L_rs.
Objective total_loss(const std::vector<DomainTerms>& domains, const LossConfig& config);

}  // namespace stal3d
