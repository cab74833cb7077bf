#include "fpgp/ad.hpp"

namespace fpgp::ad {

Tape*& active_tape() {
  thread_local Tape* tape = nullptr;
  return tape;
}

}  // namespace fpgp::ad
