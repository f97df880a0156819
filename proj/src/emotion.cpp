#include "remn/emotion.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>

namespace remn {

std::string_view class_name(EmotionClass c) noexcept {
  switch (c) {
    case EmotionClass::Angry: return "Angry";
    case EmotionClass::Disgust: return "Disgust";
    case EmotionClass::Fear: return "Fear";
    case EmotionClass::Happy: return "Happy";
    case EmotionClass::Sad: return "Sad";
    case EmotionClass::Surprise: return "Surprise";
    case EmotionClass::Neutral: return "Neutral";
  }
  return "?";
}

std::string_view class_keyword(EmotionClass c) noexcept {
  switch (c) {
    case EmotionClass::Angry: return "angry";
    case EmotionClass::Disgust: return "disgust";
    case EmotionClass::Fear: return "fear";
    case EmotionClass::Happy: return "happy";
    case EmotionClass::Sad: return "sad";
    case EmotionClass::Surprise: return "surprise";
    case EmotionClass::Neutral: return "neutral";
  }
  return "?";
}

std::optional<EmotionClass> class_from_code(long code) noexcept {
  if (code < 0 || code >= static_cast<long>(kNumClasses)) return std::nullopt;
  return static_cast<EmotionClass>(code);
}

std::optional<EmotionClass> class_from_name(std::string_view name) {
  auto lower = [](std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return out;
  };
  const std::string wanted = lower(name);
  for (EmotionClass c : kAllClasses) {
    if (lower(class_name(c)) == wanted) return c;
  }
  return std::nullopt;
}

std::size_t histogram_total(const Histogram& h) noexcept { return std::accumulate(h.begin(), h.end(), std::size_t{0}); }

}  // namespace remn
