#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dgkit {

/// Every failure the toolkit reports carries one of these codes. The names are
/// part of the external contract: they appear verbatim in API error bodies and
/// CLI diagnostics.
enum class ErrorCode {
  // graph
  DuplicateNodeId,
  OrphanNode,
  ShapeViolation,
  UnknownDomain,
  NotDescendant,
  UnknownRef,
  UnknownDoc,
  UnknownOverrideRef,
  // ingest
  SyntaxError,
  UnknownTypeLabel,
  DuplicateId,
  // flow / prompt
  NoSuperLeaves,
  InvalidRates,
  UnsupportedFamily,
  EmptySubtree,
  MissingSlot,
  UnknownLocale,
  // dialog store
  UnknownFlow,
  FlowAlreadyClaimed,
  UnknownDialog,
  RoleOrderViolation,
  UnknownAct,
  DanglingGrounding,
  WrongGoal,
  DialogClosed,
  NotActive,
  AlreadyClosed,
  BadRatios,
  OpenDialogPresent,
  InvalidTaxonomy,
  StoreCorrupt,
  // service
  BindError,
  CorpusLoadError,
  Unauthorized,
  Forbidden,
  BadRequest,
  NotFound,
  // generic
  IoError,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string detail = {})
      : std::runtime_error(message), code_(code), detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace dgkit
