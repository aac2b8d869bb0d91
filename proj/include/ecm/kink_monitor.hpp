#pragma once

#include <limits>

namespace ecm {

// Opt-in record of how close a forward pass came to a point where some op is
// not differentiable: ReLU corners, clamp limits, integer sample positions of
// a flow that carries gradient. Finite-difference checks use it to tell a
// wrong gradient from a probe that straddled a corner. Monitors nest per
// thread; ops report only while one is alive.
class KinkMonitor {
 public:
  KinkMonitor() : outer_(current_) { current_ = this; }
  ~KinkMonitor() { current_ = outer_; }
  KinkMonitor(const KinkMonitor&) = delete;
  KinkMonitor& operator=(const KinkMonitor&) = delete;

  double nearest() const { return nearest_; }

  static bool active() { return current_ != nullptr; }
  static void note(double distance) {
    if (current_ != nullptr && distance < current_->nearest_) current_->nearest_ = distance;
  }

 private:
  static inline thread_local KinkMonitor* current_ = nullptr;
  KinkMonitor* outer_;
  double nearest_ = std::numeric_limits<double>::infinity();
};

}  // namespace ecm
