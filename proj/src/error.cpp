#include "dgkit/error.hpp"

namespace dgkit {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DuplicateNodeId: return "DuplicateNodeId";
    case ErrorCode::OrphanNode: return "OrphanNode";
    case ErrorCode::ShapeViolation: return "ShapeViolation";
    case ErrorCode::UnknownDomain: return "UnknownDomain";
    case ErrorCode::NotDescendant: return "NotDescendant";
    case ErrorCode::UnknownRef: return "UnknownRef";
    case ErrorCode::UnknownDoc: return "UnknownDoc";
    case ErrorCode::UnknownOverrideRef: return "UnknownOverrideRef";
    case ErrorCode::SyntaxError: return "SyntaxError";
    case ErrorCode::UnknownTypeLabel: return "UnknownTypeLabel";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::NoSuperLeaves: return "NoSuperLeaves";
    case ErrorCode::InvalidRates: return "InvalidRates";
    case ErrorCode::UnsupportedFamily: return "UnsupportedFamily";
    case ErrorCode::EmptySubtree: return "EmptySubtree";
    case ErrorCode::MissingSlot: return "MissingSlot";
    case ErrorCode::UnknownLocale: return "UnknownLocale";
    case ErrorCode::UnknownFlow: return "UnknownFlow";
    case ErrorCode::FlowAlreadyClaimed: return "FlowAlreadyClaimed";
    case ErrorCode::UnknownDialog: return "UnknownDialog";
    case ErrorCode::RoleOrderViolation: return "RoleOrderViolation";
    case ErrorCode::UnknownAct: return "UnknownAct";
    case ErrorCode::DanglingGrounding: return "DanglingGrounding";
    case ErrorCode::WrongGoal: return "WrongGoal";
    case ErrorCode::DialogClosed: return "DialogClosed";
    case ErrorCode::NotActive: return "NotActive";
    case ErrorCode::AlreadyClosed: return "AlreadyClosed";
    case ErrorCode::BadRatios: return "BadRatios";
    case ErrorCode::OpenDialogPresent: return "OpenDialogPresent";
    case ErrorCode::InvalidTaxonomy: return "InvalidTaxonomy";
    case ErrorCode::StoreCorrupt: return "StoreCorrupt";
    case ErrorCode::BindError: return "BindError";
    case ErrorCode::CorpusLoadError: return "CorpusLoadError";
    case ErrorCode::Unauthorized: return "Unauthorized";
    case ErrorCode::Forbidden: return "Forbidden";
    case ErrorCode::BadRequest: return "BadRequest";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace dgkit
