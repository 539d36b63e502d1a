#include "evg/errors.hpp"

namespace evg {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::MalformedRecord: return "MalformedRecord";
    case Errc::CoordinateOutOfBounds: return "CoordinateOutOfBounds";
    case Errc::EmptyStream: return "EmptyStream";
    case Errc::ZeroWindow: return "ZeroWindow";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::TooFewFrames: return "TooFewFrames";
    case Errc::InvalidSpec: return "InvalidSpec";
    case Errc::BadMagic: return "BadMagic";
    case Errc::TruncatedPayload: return "TruncatedPayload";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::UnsortedSegments: return "UnsortedSegments";
    case Errc::NonScalarLoss: return "NonScalarLoss";
    case Errc::NonFiniteActivation: return "NonFiniteActivation";
    case Errc::SingleRowTrainBatch: return "SingleRowTrainBatch";
    case Errc::EmptyGraph: return "EmptyGraph";
    case Errc::BadLabel: return "BadLabel";
    case Errc::DivergedLoss: return "DivergedLoss";
    case Errc::EmptyTestSet: return "EmptyTestSet";
    case Errc::TimerTooCoarse: return "TimerTooCoarse";
    case Errc::Precondition: return "Precondition";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

}  // namespace evg
