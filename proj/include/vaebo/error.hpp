#pragma once

#include <stdexcept>
#include <string>

namespace vaebo {

// Base for every failure raised by the library. Precondition violations use
// std::invalid_argument directly.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnstableIntegration : public Error {
 public:
  UnstableIntegration(int step, const std::string& what)
      : Error("unstable integration at step " + std::to_string(step) + ": " + what), step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

class ConditioningError : public Error {
 public:
  using Error::Error;
};

class CorruptFile : public Error {
 public:
  using Error::Error;
};

class VersionMismatch : public Error {
 public:
  using Error::Error;
};

class NoThreshold : public Error {
 public:
  using Error::Error;
};

class FingerprintMismatch : public Error {
 public:
  using Error::Error;
};

class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(int epoch, int batch)
      : Error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch)),
        epoch_(epoch), batch_(batch) {}
  int epoch() const noexcept { return epoch_; }
  int batch() const noexcept { return batch_; }

 private:
  int epoch_;
  int batch_;
};

}  // namespace vaebo
