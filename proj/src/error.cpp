#include "povrate/error.hpp"

namespace povrate {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::InvalidWeight: return "InvalidWeight";
    case Errc::MissingQuestion: return "MissingQuestion";
    case Errc::EmptyFeatureSet: return "EmptyFeatureSet";
    case Errc::InvalidExpenditure: return "InvalidExpenditure";
    case Errc::EmptyGroup: return "EmptyGroup";
    case Errc::StratificationFailure: return "StratificationFailure";
    case Errc::CatalogUnavailable: return "CatalogUnavailable";
    case Errc::CatalogParseError: return "CatalogParseError";
    case Errc::NoScenesFound: return "NoScenesFound";
    case Errc::AssetFetchError: return "AssetFetchError";
    case Errc::RasterFormatError: return "RasterFormatError";
    case Errc::TileTooSmall: return "TileTooSmall";
    case Errc::NumericalError: return "NumericalError";
    case Errc::DuplicateCluster: return "DuplicateCluster";
    case Errc::DegenerateLabels: return "DegenerateLabels";
    case Errc::ShapeError: return "ShapeError";
    case Errc::DegenerateFold: return "DegenerateFold";
    case Errc::MissingClusterFeatures: return "MissingClusterFeatures";
    case Errc::InvalidRate: return "InvalidRate";
    case Errc::DegenerateVariance: return "DegenerateVariance";
    case Errc::RankDeficient: return "RankDeficient";
    case Errc::DependencyMissing: return "DependencyMissing";
    case Errc::ConfigError: return "ConfigError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace povrate
