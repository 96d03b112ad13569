#pragma once

#include <stdexcept>
#include <string>

namespace promptaug {

// Error hierarchy. Everything user-facing derives from Error so the CLI can
// catch one type; the subclasses exist so tests can assert on the category.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
    using Error::Error;
};
struct IndexError : Error {
    using Error::Error;
};
struct LengthError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct ContractError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct StalenessError : Error {
    using Error::Error;
};

}  // namespace promptaug
