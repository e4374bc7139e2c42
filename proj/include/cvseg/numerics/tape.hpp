#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cvseg/numerics/diff_array.hpp"

namespace cvseg {

/// Ordered record of the differentiable operations executed on one thread.
/// Each entry owns its backward closure, and through it every input the
/// operation read, so clearing the tape releases the whole graph.
class Tape {
 public:
  struct Entry {
    std::string op;
    std::shared_ptr<detail::Node> output;
    std::function<void()> backward;
  };

  void record(std::string op, const DiffArray& output, std::function<void()> backward);

  // Seeds d(root)/d(root) = 1 and replays entries newest-first. The root
  // must hold exactly one element. The optional observer sees the position
  // of every entry whose backward actually ran.
  void backward(const DiffArray& root,
                const std::function<void(std::size_t)>& observer = {});

  std::size_t size() const { return entries_.size(); }
  std::span<const Entry> entries() const { return entries_; }
  void clear() { entries_.clear(); }

  // The tape operations on this thread record into.
  static Tape& active();

 private:
  friend class TapeScope;
  std::vector<Entry> entries_;
};

// Installs a tape as the active one for the current thread until destroyed.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Disables recording on the current thread (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

inline void backward(const DiffArray& root) { Tape::active().backward(root); }

}  // namespace cvseg
