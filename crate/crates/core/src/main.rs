use std::io::Write;

fn main() {
    let (code, text) = falsetheta::cli::run(std::env::args_os());
    if !text.is_empty() {
        // a closed pipe is not an error worth reporting
        let _ = if code == 0 || code == 1 {
            writeln!(std::io::stdout(), "{text}")
        } else {
            writeln!(std::io::stderr(), "{text}")
        };
    }
    std::process::exit(code);
}
