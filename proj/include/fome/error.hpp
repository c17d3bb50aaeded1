#pragma once

#include <stdexcept>
#include <string>

namespace fome {

/// Base of every error raised by the library. `kind()` is the stable
/// machine-readable tag surfaced by the CLI in its error JSON.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define FOME_DEFINE_ERROR(Name)                                        \
    class Name : public Error {                                        \
    public:                                                            \
        explicit Name(const std::string& what) : Error(#Name, what) {} \
    }

FOME_DEFINE_ERROR(FormatError);
FOME_DEFINE_ERROR(DataError);
FOME_DEFINE_ERROR(IoError);
FOME_DEFINE_ERROR(SpecError);
FOME_DEFINE_ERROR(ConfigError);
FOME_DEFINE_ERROR(EmptyError);
FOME_DEFINE_ERROR(ShapeError);
FOME_DEFINE_ERROR(ContractError);
FOME_DEFINE_ERROR(CapacityError);
FOME_DEFINE_ERROR(IndexError);
FOME_DEFINE_ERROR(TrainError);

#undef FOME_DEFINE_ERROR

}  // namespace fome
