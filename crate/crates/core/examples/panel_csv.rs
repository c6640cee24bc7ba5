//! Round-trip a panel through CSV, then load a hand-written file with a
//! treatment reversal and show the rejection.

use debiased_att::panel::{read_panel, write_panel_to};
use debiased_att::{simulate_cohort, validate_panel, PanelSchema, SimParams};

fn main() -> debiased_att::Result<()> {
    let mut params = SimParams::preset("paper-1cov")?;
    params.n = 5;
    params.horizon = 3;
    let panel = simulate_cohort(&params)?;

    let mut buf = Vec::new();
    write_panel_to(&panel, &mut buf).expect("in-memory write");
    let text = String::from_utf8(buf).expect("utf-8 csv");
    print!("{text}");

    let reread = read_panel(text.as_bytes(), &PanelSchema::default())?;
    assert_eq!(reread, panel);
    println!("round trip ok, validation issues: {}", validate_panel(&reread).issues.len());

    let broken = "id,t_index,D,dN,X1\n1,0,0,2,1.0\n1,1,1,0,2.0\n1,2,0,1,3.0\n1,3,0,0,4.0\n";
    match read_panel(broken.as_bytes(), &PanelSchema::default()) {
        Ok(_) => println!("unexpectedly accepted"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
