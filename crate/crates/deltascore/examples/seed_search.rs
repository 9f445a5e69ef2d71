use deltascore::perturb::{perturb_jumble, perturb_typo};
use deltascore::text::ConditionedStory;

fn main() {
    let typo_story =
        ConditionedStory::new("t", "", "he went to see what the problem was").unwrap();
    for seed in 0..100_000u64 {
        let out = perturb_typo(&typo_story, 0.125, seed).unwrap();
        if out.perturbed == "he went to see whta the problem was" {
            println!("typo seed = {seed}");
            break;
        }
    }

    let jumble_story =
        ConditionedStory::new("j", "", "We play badminton every evening .").unwrap();
    for seed in 0..10_000_000u64 {
        let out = perturb_jumble(&jumble_story, 1.0, seed).unwrap();
        if out.perturbed == "badminton every We evening play ." {
            println!("jumble seed = {seed}");
            break;
        }
    }

    let two = ConditionedStory::new("p", "", "a b").unwrap();
    for seed in 0..64u64 {
        let out = perturb_jumble(&two, 1.0, seed).unwrap();
        if out.perturbed == "b a" {
            println!("two-token swap seed = {seed}");
            break;
        }
    }

    // sentence reorder on a 2-sentence Table-1-style story
    let sent = ConditionedStory::new(
        "s",
        "",
        "she did n't intend to buy anything . unfortunately she has poor impulse control .",
    )
    .unwrap();
    for seed in 0..64u64 {
        let out = deltascore::perturb::perturb_sent_reorder(&sent, seed).unwrap();
        if out.perturbed
            == "unfortunately she has poor impulse control . she did n't intend to buy anything ."
        {
            println!("sent-reorder swap seed = {seed} (always swaps, any seed works)");
            break;
        }
    }
}
