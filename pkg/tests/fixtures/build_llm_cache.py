#!/usr/bin/env python3
"""Populate llm_cache/ with the recorded generations the demo replays.

Run from anywhere; paths are resolved relative to this file.  The cache
entries are keyed by the exact request bodies the replay backend sends,
so this script must use the same llm settings as config.json.
"""
from pathlib import Path

from mwpsolve.backends import LlmBackendConfig, build_prompt, default_prompt_spec
from mwpsolve.corpus import load_dataset

HERE = Path(__file__).resolve().parent

# One list per LLM-routed problem, one text per sample index.
GENERATIONS: dict[str, list[str]] = {
    "p02": [
        "One bag weighs 450 grams, so two bags weigh 900 grams, which is 0.9 kilograms. The answer is 0.9.",
        "450 grams times 2 is 900 grams. Converting gives 0.9 kilograms. The answer is 0.9.",
        "Two bags weigh 450 * 2 = 900 grams. The answer is 900.",
        "900 grams equals 0.9 kilograms. The answer is 0.9.",
        "Double 450 grams, then divide by 1000 to get kilograms. The answer is 0.9.",
        "Each bag is 450 grams, so together they weigh 900. The answer is 900.",
        "450 * 2 / 1000 = 0.9. The answer is 0.9.",
        "I cannot tell the units apart here.",
        "Two bags are 900 grams, and 900 / 1000 = 0.9. The answer is 0.9.",
        "The total is 450 + 450 = 900. The answer is 900.",
        "0.45 kilograms per bag, doubled, is 0.9 kilograms. The answer is 0.9.",
        "The bags weigh 0.9 kilograms together. The answer is 0.9.",
        "450 grams is 0.45 kilograms, so 2 bags are 0.9. The answer is 0.9.",
        "Adding 450 grams twice gives 900. The answer is 900.",
        "Convert after doubling: 900 grams is 0.9 kilograms. The answer is 0.9.",
        "The answer is 0.9.",
        "Ignoring the conversion, the total is 900. The answer is 900.",
        "Two bags come to 0.9 kilograms. The answer is 0.9.",
        "The question mixes units in a confusing way.",
        "450 doubled is 900. The answer is 900.",
    ],
    "p03": [
        "The terms rise by 4, so the blank is 14. The answer is 14.",
        "2, 6, 10, 14, 18 climbs by 4 each step. The answer is 14.",
        "Add 4 to 10 to get the missing term. The answer is 14.",
        "The sequence repeats 10 in the middle. The answer is 10.",
        "Each term adds 4, giving 14 before 18. The answer is 14.",
        "I think the blank copies the previous term. The answer is 10.",
        "10 + 4 = 14 fills the blank. The answer is 14.",
        "The answer is 14.",
        "The pattern looks flat to me. The answer is 10.",
        "Halfway between 10 and 18 is 14. The answer is 14.",
        "There is no pattern I can see.",
        "The common difference is 4. The answer is 14.",
        "The blank mirrors the third term. The answer is 10.",
        "18 - 4 = 14. The answer is 14.",
        "The sequence makes no sense to me.",
        "Counting by fours lands on 14. The answer is 14.",
        "Those numbers look random.",
        "The missing value is 14. The answer is 14.",
        "My reasoning keeps going in circles.",
        "The gap shrinks, so the blank stays at 10. The answer is 10.",
    ],
    "p08": [
        "Two places left divides by 100: 3.6 / 100 = 0.036. The answer is 0.036.",
        "Shifting twice gives 0.036. The answer is 0.036.",
        "Shifting once gives 0.36. The answer is 0.36.",
        "3.6 becomes 0.36 then 0.036. The answer is 0.036.",
        "Dividing 3.6 by 100 yields 0.036. The answer is 0.036.",
        "Decimal shifts always confuse me.",
        "The answer is 0.036.",
        "Left twice means divide by 100. The answer is 0.036.",
        "0.036 comes from moving the point twice. The answer is 0.036.",
        "Moving the point one spot makes 0.36. The answer is 0.36.",
        "3.6 / 100 = 0.036. The answer is 0.036.",
        "I lost track of the decimal point.",
        "Two hops left lands on 0.036. The answer is 0.036.",
        "The value shrinks a hundredfold to 0.036. The answer is 0.036.",
        "A single shift gives 0.36. The answer is 0.36.",
        "Start at 3.6 and slide twice: 0.036. The answer is 0.036.",
        "The direction of the shift is unclear to me.",
        "Hundred times smaller is 0.036. The answer is 0.036.",
        "3.6 over 100 equals 0.036. The answer is 0.036.",
        "It moves one place to 0.36. The answer is 0.36.",
    ],
    "p11": [
        "这是平方数列，所以括号里应填25。",
        "每一项都是序号的平方，空格处是25。",
        "相邻差依次为3、5、7、9，所以填25。",
        "第五项是5的平方，即25。",
        "我觉得下一项直接是36。",
        "规律是平方数，答案为25。",
        "空缺的数是25。",
        "照抄最后一项，填36。",
        "平方规律告诉我们是25。",
        "应该与末项相同，是36。",
        "序号平方得到25。",
        "看不出明显的规律。",
        "缺的平方数是25。",
        "由规律推出空格为25。",
        "末尾重复，填36。",
        "第五个平方数是25。",
        "规律太乱，说不清。",
        "依平方规律应是25。",
        "这些数看着没有头绪。",
        "直接取36。",
    ],
    "p12": [
        "A short ride, so I guess about 50. The answer is 50.",
        "One hour is 60 minutes. The answer is 60.",
        "60 minutes make an hour. The answer is 60.",
        "Rides like that run 50 minutes. The answer is 50.",
        "The conversion is 1 * 60 = 60. The answer is 60.",
        "Trains are usually a bit under an hour, say 50. The answer is 50.",
        "An hour equals 60 minutes exactly. The answer is 60.",
        "The timetable is not given here.",
        "Subtracting a break leaves 50. The answer is 50.",
        "The answer is 60.",
        "I cannot convert this without more context.",
        "Call it 50 minutes in practice. The answer is 50.",
        "Sixty minutes per hour, so 60. The answer is 60.",
        "Hours and minutes mix me up.",
        "Rounding down gives 50. The answer is 50.",
        "1 hour = 60 minutes. The answer is 60.",
        "My estimate stays at 50. The answer is 50.",
        "No way to tell from the text.",
        "It lasts 60 minutes. The answer is 60.",
        "I will stick with 50. The answer is 50.",
    ],
}


def main() -> None:
    dataset = load_dataset(HERE / "dataset.json")
    spec = default_prompt_spec()
    config = LlmBackendConfig(
        mode="replay",
        cache_dir=HERE / "llm_cache",
        temperature=0.7,
        num_samples=20,
        max_tokens=256,
        seed=0,
    )
    cache = config.cache
    for problem_id, texts in sorted(GENERATIONS.items()):
        prompt = build_prompt(dataset.get(problem_id), spec)
        for index, text in enumerate(texts):
            cache.put(config.request_body(prompt, index), [text])
    total = sum(len(texts) for texts in GENERATIONS.values())
    print(f"wrote {total} cache entries to {HERE / 'llm_cache'}")


if __name__ == "__main__":
    main()
