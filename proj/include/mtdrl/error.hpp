#pragma once

#include <stdexcept>
#include <string>

namespace mtdrl {

// Base for every failure raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (files, datasets, shapes).
class DataError : public Error {
public:
    using Error::Error;
};

// Invalid arguments or configuration values.
class UsageError : public Error {
public:
    using Error::Error;
};

}  // namespace mtdrl
