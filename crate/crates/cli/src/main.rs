use clap::Parser;

fn main() {
    let cli = erecon_cli::Cli::parse();
    match erecon_cli::execute(&cli) {
        Ok(msg) => println!("{msg}"),
        Err(e) => {
            eprintln!("erecon: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
