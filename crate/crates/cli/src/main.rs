use clap::Parser;

fn main() {
    let args = elpose_cli::Args::parse();
    match elpose_cli::run(&args) {
        Ok(summary) => println!("{summary}"),
        Err(err) => {
            eprintln!("elpose: {err}");
            std::process::exit(err.exit_code());
        }
    }
}
