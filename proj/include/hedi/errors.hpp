#pragma once

#include <stdexcept>
#include <string>

namespace hedi {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

#define HEDI_DEFINE_ERROR(name)                  \
    struct name : Error {                        \
        using Error::Error;                      \
        explicit name() : Error(#name) {}        \
    }

// volume-io
HEDI_DEFINE_ERROR(UnsupportedFormat);
HEDI_DEFINE_ERROR(CorruptHeader);
HEDI_DEFINE_ERROR(TruncatedData);
HEDI_DEFINE_ERROR(IoFailure);
HEDI_DEFINE_ERROR(MalformedRow);
HEDI_DEFINE_ERROR(DuplicateId);

// preprocess
HEDI_DEFINE_ERROR(EmptyMask);
HEDI_DEFINE_ERROR(InvalidSpacing);

// registration
HEDI_DEFINE_ERROR(GridMismatch);
HEDI_DEFINE_ERROR(EmptyInput);
HEDI_DEFINE_ERROR(DivergenceDetected);
HEDI_DEFINE_ERROR(OutOfBounds);

// strain
HEDI_DEFINE_ERROR(DegenerateGrid);

// surface
HEDI_DEFINE_ERROR(EmptySurface);
HEDI_DEFINE_ERROR(MissingChannel);

// metrics
HEDI_DEFINE_ERROR(BothZero);
HEDI_DEFINE_ERROR(ZeroDefectArea);
HEDI_DEFINE_ERROR(EmptyLandmarkSet);

// phantom
HEDI_DEFINE_ERROR(InvalidSpec);
HEDI_DEFINE_ERROR(InversionDiverged);

// pipeline
HEDI_DEFINE_ERROR(ValidationFailed);

#undef HEDI_DEFINE_ERROR

}  // namespace hedi
