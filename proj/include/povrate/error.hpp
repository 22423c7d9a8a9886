#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace povrate {

enum class Errc {
  DuplicateId,
  InvalidWeight,
  MissingQuestion,
  EmptyFeatureSet,
  InvalidExpenditure,
  EmptyGroup,
  StratificationFailure,
  CatalogUnavailable,
  CatalogParseError,
  NoScenesFound,
  AssetFetchError,
  RasterFormatError,
  TileTooSmall,
  NumericalError,
  DuplicateCluster,
  DegenerateLabels,
  ShapeError,
  DegenerateFold,
  MissingClusterFeatures,
  InvalidRate,
  DegenerateVariance,
  RankDeficient,
  DependencyMissing,
  ConfigError,
  IoError,
};

std::string_view errc_name(Errc code) noexcept;

// Every failure surfaced by the library carries one of the codes above so the
// CLI can print a single machine-parsable line.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace povrate
