#include "cvseg/numerics/tape.hpp"

#include "cvseg/errors.hpp"

namespace cvseg {

namespace {

thread_local Tape default_tape;
thread_local Tape* active_tape = nullptr;
thread_local bool recording_enabled = true;

}  // namespace

void Tape::record(std::string op, const DiffArray& output, std::function<void()> backward) {
  entries_.push_back(Entry{std::move(op), output.node(), std::move(backward)});
}

void Tape::backward(const DiffArray& root, const std::function<void(std::size_t)>& observer) {
  if (!root.defined() || root.size() != 1) {
    throw UsageError("backward() needs a scalar root, got shape " +
                     (root.defined() ? shape_string(root.shape()) : std::string("<undefined>")));
  }
  root.node()->ensure_grad()[0] += 1.0;
  for (std::size_t i = entries_.size(); i-- > 0;) {
    const Entry& e = entries_[i];
    if (!e.output->has_grad()) continue;
    e.backward();
    if (observer) observer(i);
  }
}

Tape& Tape::active() { return active_tape ? *active_tape : default_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(active_tape) { active_tape = &tape; }

TapeScope::~TapeScope() { active_tape = previous_; }

NoGradGuard::NoGradGuard() : previous_(recording_enabled) { recording_enabled = false; }

NoGradGuard::~NoGradGuard() { recording_enabled = previous_; }

bool grad_enabled() { return recording_enabled; }

}  // namespace cvseg
