#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mtlpose {

// Every library failure derives from Error so callers can catch one type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
public:
    using Error::Error;
};

class BehindCamera : public Error {
public:
    BehindCamera(std::size_t index, double depth)
        : Error("point " + std::to_string(index) + " has non-positive depth " + std::to_string(depth)),
          index_(index) {}
    std::size_t index() const { return index_; }

private:
    std::size_t index_;
};

class GenerationError : public Error {
public:
    using Error::Error;
};

class DegenerateSample : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class CorruptDataset : public Error {
public:
    using Error::Error;
};

class InsufficientPoints : public Error {
public:
    using Error::Error;
};

class DegenerateGeometry : public Error {
public:
    using Error::Error;
};

class SolverFailure : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class InvalidConfig : public Error {
public:
    using Error::Error;
};

class TrainingDiverged : public Error {
public:
    using Error::Error;
};

class StrategyNotApplicable : public Error {
public:
    using Error::Error;
};

class InvalidRequest : public Error {
public:
    using Error::Error;
};

}  // namespace mtlpose
