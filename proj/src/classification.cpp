#include "cleanstack/classification.hpp"

namespace cleanstack {

std::string_view reason_name(ReasonCode r) {
  switch (r) {
  case ReasonCode::IsArray:
    return "IsArray";
  case ReasonCode::StructContainsArray:
    return "StructContainsArray";
  case ReasonCode::AddrStored:
    return "AddrStored";
  case ReasonCode::AtomicNewVal:
    return "AtomicNewVal";
  case ReasonCode::AddrPtrToInt:
    return "AddrPtrToInt";
  case ReasonCode::AddrPassedToCall:
    return "AddrPassedToCall";
  case ReasonCode::AddrEscapesControlFlow:
    return "AddrEscapesControlFlow";
  case ReasonCode::ComplexPtrOp:
    return "ComplexPtrOp";
  case ReasonCode::PhiPropagated:
    return "PhiPropagated";
  case ReasonCode::TaintReached:
    return "TaintReached";
  }
  return "?";
}

std::string_view method_name(Method m) {
  switch (m) {
  case Method::Taint:
    return "taint";
  case Method::Heuristic:
    return "heuristic";
  case Method::Union:
    return "union";
  }
  return "?";
}

std::optional<Method> parse_method(std::string_view s) {
  if (s == "taint")
    return Method::Taint;
  if (s == "heuristic")
    return Method::Heuristic;
  if (s == "union")
    return Method::Union;
  return std::nullopt;
}

const ObjectLabel *ObjectClassification::find(std::string_view object) const {
  for (const auto &l : objects)
    if (l.object == object)
      return &l;
  return nullptr;
}

bool ObjectClassification::is_unclean(std::string_view object) const {
  const ObjectLabel *l = find(object);
  return l && l->unclean;
}

std::vector<std::string> ObjectClassification::unclean_objects() const {
  std::vector<std::string> out;
  for (const auto &l : objects)
    if (l.unclean)
      out.push_back(l.object);
  return out;
}

std::size_t ObjectClassification::unclean_count() const {
  std::size_t n = 0;
  for (const auto &l : objects)
    n += l.unclean ? 1 : 0;
  return n;
}

ObjectClassification merge_classifications(const ObjectClassification &a,
                                           const ObjectClassification &b) {
  if (a.function != b.function)
    throw Error("cannot merge classifications of '" + a.function + "' and '" + b.function + "'");
  ObjectClassification out = a;
  for (auto &l : out.objects) {
    if (const ObjectLabel *o = b.find(l.object)) {
      l.reasons.insert(o->reasons.begin(), o->reasons.end());
      l.unclean = !l.reasons.empty();
    }
  }
  for (const auto &l : b.objects)
    if (!out.find(l.object))
      out.objects.push_back(l);
  return out;
}

} // namespace cleanstack
